#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lctr/config.hpp"
#include "lctr/dataset.hpp"
#include "lctr/localization.hpp"
#include "lctr/model.hpp"

namespace lctr {

/// Per-image inference products that box extraction and scoring consume.
struct InferenceRecord {
  std::vector<double> probs;
  std::vector<std::size_t> ranked;
  Tensor relation_map;  // M^r_*, undefined when RPAM is off
  Tensor top1_heatmap;  // [H x W] in [0, 1], predicted class
  Tensor gt_heatmap;    // [H x W] in [0, 1], ground-truth class
};

/// Localization heatmap for one class: channel of X_CDM, fused with the
/// relation map when given, upsampled and normalized.
Tensor class_heatmap(const Tensor& class_maps, std::size_t class_id,
                     const Tensor& relation_map, std::size_t image_size);

std::vector<InferenceRecord> infer(const LctrModel& model,
                                   const std::vector<data::Sample>& samples, bool rpam_enabled);

/// Extracts boxes at the given ratio and aggregates the metrics.
loc::MetricsReport score_records(const std::vector<InferenceRecord>& records,
                                 const std::vector<data::Sample>& samples,
                                 double threshold_ratio,
                                 std::vector<loc::SamplePrediction>* predictions = nullptr);

struct EvalResult {
  loc::MetricsReport report;
  std::vector<loc::SamplePrediction> predictions;
  std::vector<InferenceRecord> records;
};

/// Full evaluation. With out_dir set, writes heatmaps/heatmap_<id>.pgm,
/// boxes.csv, metrics.txt and metrics.json there.
EvalResult run_eval(const LctrModel& model, const std::vector<data::Sample>& samples,
                    const RunConfig& config,
                    const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Ratios 0.05, 0.10, ..., 0.90.
std::vector<double> default_sweep_ratios();

struct SweepPoint {
  double ratio = 0.0;
  loc::MetricsReport report;
};

std::vector<SweepPoint> sweep_thresholds(const std::vector<InferenceRecord>& records,
                                         const std::vector<data::Sample>& samples,
                                         const std::vector<double>& ratios);
/// CSV `ratio,gt_known,top1_loc`.
std::string format_sweep_csv(const std::vector<SweepPoint>& points);

struct AblationRow {
  std::uint64_t seed = 0;
  bool rpam_enabled = false;
  bool cdm_enabled = false;
  loc::MetricsReport report;

  std::string name() const;
};

/// For each seed: regenerate data, train one model with and one without
/// CDM, evaluate each with RPAM on and off. Four rows per seed, ordered
/// baseline, rpam, cdm, full.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const std::string&)>& log = {});

/// CSV `seed,config,rpam,cdm,top1_cls,top5_cls,top1_loc,top5_loc,gt_known`.
std::string format_ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace lctr
