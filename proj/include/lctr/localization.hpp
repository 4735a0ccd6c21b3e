#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "lctr/tensor.hpp"

namespace lctr::loc {

/// Half-open pixel box: columns [x0, x1), rows [y0, y1).
struct Box {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  std::size_t width() const { return x1 - x0; }
  std::size_t height() const { return y1 - y0; }
  std::size_t area() const { return width() * height(); }
  bool valid_within(std::size_t image_w, std::size_t image_h) const {
    return x0 < x1 && y0 < y1 && x1 <= image_w && y1 <= image_h;
  }
  bool operator==(const Box&) const = default;
};

struct BoxResult {
  Box box;
  bool empty_foreground = false;  // nothing above threshold; box is the full image
};

struct LocalizationMaps {
  Tensor m_cdm;      // [h x w]
  Tensor m_rpam;     // [h x w]
  Tensor m_fuse;     // [h x w]
  Tensor upsampled;  // [H x W], in [0, 1]
};

inline constexpr double kDefaultThresholdRatio = 0.35;

/// Channel class_id of X_CDM.
Tensor extract_m_cdm(const Tensor& class_maps, std::size_t class_id);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);
/// Class indices ordered by decreasing score, ties by lower index.
std::vector<std::size_t> ranked_classes(std::span<const double> scores);

/// Elementwise product of two equally shaped maps.
Tensor fuse(const Tensor& m_cdm, const Tensor& m_rpam);

/// Bilinear resize with half-pixel centers (align-corners false); source
/// coordinates are clamped to the map.
Tensor upsample_bilinear(const Tensor& map, std::size_t out_h, std::size_t out_w);

/// (x - min) / (max - min); a constant map normalizes to zeros.
Tensor normalize_map(const Tensor& map);

/// fuse -> bilinear upsample -> min-max normalize.
Tensor fuse_and_upsample(const Tensor& m_cdm, const Tensor& m_rpam, std::size_t out_h,
                         std::size_t out_w);

LocalizationMaps build_localization_maps(const Tensor& m_cdm, const Tensor& m_rpam,
                                         std::size_t out_h, std::size_t out_w);

/// CAM box: min-max normalize, keep pixels strictly above ratio * max,
/// label 8-connected components in a row-major scan, and return the tight
/// box of the largest one (ties: first labelled).
BoxResult extract_box(const Tensor& heatmap, double threshold_ratio);

double iou(const Box& a, const Box& b);

struct SamplePrediction {
  std::vector<std::size_t> ranked;  // classes by decreasing probability
  Box top1_box;                     // from the predicted class channel
  Box gt_class_box;                 // from the ground-truth class channel
};

struct GroundTruth {
  std::size_t label = 0;
  Box box;
};

struct SampleOutcome {
  bool top1_cls = false, top5_cls = false;
  bool gt_known = false;
  bool top1_loc = false, top5_loc = false;
  double iou = 0.0;
};

struct MetricsReport {
  double top1_cls = 0.0, top5_cls = 0.0;
  double top1_loc = 0.0, top5_loc = 0.0;
  double gt_known = 0.0;
  std::size_t n_samples = 0;

  /// The ordering constraints that every report satisfies.
  bool consistent() const;
};

inline constexpr double kIouThreshold = 0.5;

SampleOutcome score_sample(const SamplePrediction& prediction, const GroundTruth& truth);

/// Aggregates per-sample outcomes. UsageError on length mismatch.
MetricsReport evaluate(const std::vector<SamplePrediction>& predictions,
                       const std::vector<GroundTruth>& ground_truth);

/// Flat `key = value` lines with fixed formatting (byte-stable).
std::string format_metrics_text(const MetricsReport& report);
std::string format_metrics_json(const MetricsReport& report);
void write_metrics(const std::filesystem::path& dir, const MetricsReport& report);

/// Binary portable graymap (P5, maxval 255) of a [H x W] map in [0, 1].
void write_pgm(const std::filesystem::path& path, const Tensor& heatmap);

struct BoxRecord {
  std::size_t image_id = 0;
  Box box;
  double score = 0.0;
};

/// CSV with header `image_id,x0,y0,x1,y1,score`.
void write_boxes_csv(const std::filesystem::path& path, const std::vector<BoxRecord>& rows);

}  // namespace lctr::loc
