#include "lctr/evaluation.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "lctr/rpam.hpp"
#include "lctr/train.hpp"

namespace lctr {

Tensor class_heatmap(const Tensor& class_maps, std::size_t class_id,
                     const Tensor& relation_map, std::size_t image_size) {
  Tensor m_cdm = loc::extract_m_cdm(class_maps, class_id);
  if (!relation_map.defined()) {
    return loc::normalize_map(loc::upsample_bilinear(m_cdm, image_size, image_size));
  }
  return loc::fuse_and_upsample(m_cdm, relation_map, image_size, image_size);
}

std::vector<InferenceRecord> infer(const LctrModel& model,
                                   const std::vector<data::Sample>& samples, bool rpam_enabled) {
  NoGradGuard no_grad;
  const BackboneConfig& bc = model.backbone_config();
  std::vector<InferenceRecord> records;
  records.reserve(samples.size());
  for (const data::Sample& sample : samples) {
    LctrModel::Output out = model.forward(sample.image);
    InferenceRecord r;
    r.probs = out.classification.probs.to_vector();
    r.ranked = loc::ranked_classes(r.probs);
    if (rpam_enabled) {
      r.relation_map =
          rpam::build_patch_relation_map(out.backbone.attention, bc.grid_size(), bc.grid_size()).map;
    }
    r.top1_heatmap = class_heatmap(out.class_maps, r.ranked.front(), r.relation_map, bc.image_size);
    r.gt_heatmap = r.ranked.front() == sample.label
                       ? r.top1_heatmap
                       : class_heatmap(out.class_maps, sample.label, r.relation_map, bc.image_size);
    records.push_back(std::move(r));
  }
  return records;
}

loc::MetricsReport score_records(const std::vector<InferenceRecord>& records,
                                 const std::vector<data::Sample>& samples,
                                 double threshold_ratio,
                                 std::vector<loc::SamplePrediction>* predictions) {
  if (records.size() != samples.size()) {
    throw UsageError("score_records: record count does not match sample count");
  }
  std::vector<loc::SamplePrediction> preds;
  std::vector<loc::GroundTruth> truth;
  preds.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const InferenceRecord& r = records[i];
    loc::SamplePrediction p;
    p.ranked = r.ranked;
    p.top1_box = loc::extract_box(r.top1_heatmap, threshold_ratio).box;
    p.gt_class_box = r.gt_heatmap.impl() == r.top1_heatmap.impl()
                         ? p.top1_box
                         : loc::extract_box(r.gt_heatmap, threshold_ratio).box;
    preds.push_back(std::move(p));
    truth.push_back(loc::GroundTruth{samples[i].label, samples[i].gt_box});
  }
  loc::MetricsReport report = loc::evaluate(preds, truth);
  if (predictions) *predictions = std::move(preds);
  return report;
}

EvalResult run_eval(const LctrModel& model, const std::vector<data::Sample>& samples,
                    const RunConfig& config,
                    const std::optional<std::filesystem::path>& out_dir) {
  EvalResult result;
  result.records = infer(model, samples, config.rpam_enabled);
  result.report =
      score_records(result.records, samples, config.threshold_ratio, &result.predictions);
  if (out_dir) {
    const std::filesystem::path heatmaps = *out_dir / "heatmaps";
    std::filesystem::create_directories(heatmaps);
    std::vector<loc::BoxRecord> boxes;
    for (std::size_t i = 0; i < result.records.size(); ++i) {
      loc::write_pgm(heatmaps / ("heatmap_" + std::to_string(i) + ".pgm"),
                     result.records[i].top1_heatmap);
      const std::size_t top1 = result.records[i].ranked.front();
      boxes.push_back(loc::BoxRecord{i, result.predictions[i].top1_box,
                                     result.records[i].probs[top1]});
    }
    loc::write_boxes_csv(*out_dir / "boxes.csv", boxes);
    loc::write_metrics(*out_dir, result.report);
  }
  return result;
}

std::vector<double> default_sweep_ratios() {
  std::vector<double> ratios;
  for (int step = 1; step <= 18; ++step) ratios.push_back(0.05 * step);
  return ratios;
}

std::vector<SweepPoint> sweep_thresholds(const std::vector<InferenceRecord>& records,
                                         const std::vector<data::Sample>& samples,
                                         const std::vector<double>& ratios) {
  std::vector<SweepPoint> points;
  for (double ratio : ratios) points.push_back({ratio, score_records(records, samples, ratio)});
  return points;
}

std::string format_sweep_csv(const std::vector<SweepPoint>& points) {
  std::string out = "ratio,gt_known,top1_loc\n";
  char buf[96];
  for (const SweepPoint& p : points) {
    std::snprintf(buf, sizeof(buf), "%.2f,%.6f,%.6f\n", p.ratio, p.report.gt_known,
                  p.report.top1_loc);
    out += buf;
  }
  return out;
}

std::string AblationRow::name() const {
  if (rpam_enabled && cdm_enabled) return "full";
  if (cdm_enabled) return "cdm";
  if (rpam_enabled) return "rpam";
  return "baseline";
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const std::string&)>& log) {
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds) {
    RunConfig config = base;
    config.seed = seed;
    config.finalize();
    const data::Dataset dataset =
        data::generate_dataset(config.n_train, config.n_test, config.backbone.image_size,
                               config.backbone.num_classes, seed);
    for (bool with_cdm : {false, true}) {
      config.cdm_enabled = with_cdm;
      LctrModel model(config);
      train(model, config, dataset.train, [&](const EpochLog& e) {
        if (!log) return;
        std::ostringstream msg;
        msg << "seed " << seed << (with_cdm ? " cdm" : " 1x1") << " epoch " << e.epoch
            << " loss " << e.mean_loss << " acc " << e.train_accuracy;
        log(msg.str());
      });
      for (bool with_rpam : {false, true}) {
        const std::vector<InferenceRecord> records = infer(model, dataset.test, with_rpam);
        AblationRow row{seed, with_rpam, with_cdm,
                        score_records(records, dataset.test, config.threshold_ratio)};
        if (log) log("seed " + std::to_string(seed) + " " + row.name() + ":\n" +
                     loc::format_metrics_text(row.report));
        rows.push_back(row);
      }
    }
  }
  return rows;
}

std::string format_ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "seed,config,rpam,cdm,top1_cls,top5_cls,top1_loc,top5_loc,gt_known\n";
  char buf[160];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%llu,%s,%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  static_cast<unsigned long long>(r.seed), r.name().c_str(), r.rpam_enabled,
                  r.cdm_enabled, r.report.top1_cls, r.report.top5_cls, r.report.top1_loc,
                  r.report.top5_loc, r.report.gt_known);
    out += buf;
  }
  return out;
}

}  // namespace lctr
