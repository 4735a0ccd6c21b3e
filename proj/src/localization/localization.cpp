#include "lctr/localization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace lctr::loc {

namespace {

void require_map(const Tensor& map, const char* op) {
  if (!map.defined() || map.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D map, got " +
                         (map.defined() ? shape_to_string(map.shape()) : "undefined"));
  }
}

}  // namespace

Tensor extract_m_cdm(const Tensor& class_maps, std::size_t class_id) {
  if (!class_maps.defined() || class_maps.rank() != 3) {
    throw DimensionError("extract_m_cdm: expected [C x h x w]");
  }
  if (class_id >= class_maps.dim(0)) {
    throw UsageError("extract_m_cdm: class " + std::to_string(class_id) + " out of range");
  }
  const std::size_t h = class_maps.dim(1), w = class_maps.dim(2);
  auto d = class_maps.data();
  auto first = d.begin() + static_cast<std::ptrdiff_t>(class_id * h * w);
  return Tensor::from({h, w}, {first, first + static_cast<std::ptrdiff_t>(h * w)});
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw UsageError("argmax of an empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<std::size_t> ranked_classes(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

Tensor fuse(const Tensor& m_cdm, const Tensor& m_rpam) {
  require_map(m_cdm, "fuse");
  require_map(m_rpam, "fuse");
  if (m_cdm.shape() != m_rpam.shape()) {
    throw DimensionError("fuse: " + shape_to_string(m_cdm.shape()) + " vs " +
                         shape_to_string(m_rpam.shape()));
  }
  auto a = m_cdm.data();
  auto b = m_rpam.data();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return Tensor::from(m_cdm.shape(), std::move(out));
}

Tensor upsample_bilinear(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  require_map(map, "upsample_bilinear");
  const std::size_t in_h = map.dim(0), in_w = map.dim(1);
  auto src = map.data();

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double pos = (static_cast<double>(i) + 0.5) * scale - 0.5;
      pos = std::max(pos, 0.0);
      auto lo = std::min(static_cast<std::size_t>(pos), in - 1);
      std::size_t hi = std::min(lo + 1, in - 1);
      t[i] = Tap{lo, hi, pos - static_cast<double>(lo)};
    }
    return t;
  };
  const std::vector<Tap> ys = taps(in_h, out_h);
  const std::vector<Tap> xs = taps(in_w, out_w);
  std::vector<double> out(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const Tap& ty = ys[y];
    for (std::size_t x = 0; x < out_w; ++x) {
      const Tap& tx = xs[x];
      const double top = src[ty.lo * in_w + tx.lo] * (1.0 - tx.frac) +
                         src[ty.lo * in_w + tx.hi] * tx.frac;
      const double bottom = src[ty.hi * in_w + tx.lo] * (1.0 - tx.frac) +
                            src[ty.hi * in_w + tx.hi] * tx.frac;
      out[y * out_w + x] = top * (1.0 - ty.frac) + bottom * ty.frac;
    }
  }
  return Tensor::from({out_h, out_w}, std::move(out));
}

Tensor normalize_map(const Tensor& map) {
  auto d = map.data();
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  const double range = *hi - *lo;
  std::vector<double> out(d.size(), 0.0);
  if (range > 0.0) {
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = (d[i] - *lo) / range;
  }
  return Tensor::from(map.shape(), std::move(out));
}

Tensor fuse_and_upsample(const Tensor& m_cdm, const Tensor& m_rpam, std::size_t out_h,
                         std::size_t out_w) {
  return normalize_map(upsample_bilinear(fuse(m_cdm, m_rpam), out_h, out_w));
}

LocalizationMaps build_localization_maps(const Tensor& m_cdm, const Tensor& m_rpam,
                                         std::size_t out_h, std::size_t out_w) {
  LocalizationMaps maps;
  maps.m_cdm = m_cdm;
  maps.m_rpam = m_rpam;
  maps.m_fuse = fuse(m_cdm, m_rpam);
  maps.upsampled = normalize_map(upsample_bilinear(maps.m_fuse, out_h, out_w));
  return maps;
}

BoxResult extract_box(const Tensor& heatmap, double threshold_ratio) {
  require_map(heatmap, "extract_box");
  if (!(threshold_ratio > 0.0 && threshold_ratio < 1.0)) {
    throw ConfigError("extract_box: threshold ratio must lie in (0, 1)");
  }
  const std::size_t h = heatmap.dim(0), w = heatmap.dim(1);
  Tensor normalized = normalize_map(heatmap);
  auto v = normalized.data();
  const double cutoff = threshold_ratio * *std::max_element(v.begin(), v.end());

  std::vector<int> label(h * w, -1);
  std::vector<std::size_t> queue;
  Box best;
  std::size_t best_area = 0;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!(v[start] > cutoff) || label[start] >= 0) continue;
    label[start] = 1;
    queue.assign(1, start);
    Box box{start % w, start / w, start % w + 1, start / w + 1};
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const std::size_t y = queue[head] / w, x = queue[head] % w;
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x + 1);
      box.y1 = std::max(box.y1, y + 1);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const std::ptrdiff_t ny = static_cast<std::ptrdiff_t>(y) + dy;
          const std::ptrdiff_t nx = static_cast<std::ptrdiff_t>(x) + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(h) ||
              nx >= static_cast<std::ptrdiff_t>(w)) {
            continue;
          }
          const std::size_t n = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
          if (label[n] < 0 && v[n] > cutoff) {
            label[n] = 1;
            queue.push_back(n);
          }
        }
      }
    }
    if (queue.size() > best_area) {
      best_area = queue.size();
      best = box;
    }
  }
  if (best_area == 0) return BoxResult{Box{0, 0, w, h}, true};
  return BoxResult{best, false};
}

double iou(const Box& a, const Box& b) {
  const std::size_t ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  const std::size_t ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  const std::size_t inter = (ix0 < ix1 && iy0 < iy1) ? (ix1 - ix0) * (iy1 - iy0) : 0;
  const std::size_t uni = a.area() + b.area() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

bool MetricsReport::consistent() const {
  return top1_loc <= std::min(top1_cls, gt_known) && top1_loc <= top5_loc &&
         top1_cls <= top5_cls && top5_loc <= std::min(top5_cls, gt_known);
}

SampleOutcome score_sample(const SamplePrediction& prediction, const GroundTruth& truth) {
  if (prediction.ranked.empty()) throw UsageError("score_sample: empty class ranking");
  SampleOutcome o;
  o.top1_cls = prediction.ranked.front() == truth.label;
  const std::size_t k = std::min<std::size_t>(5, prediction.ranked.size());
  o.top5_cls = std::find(prediction.ranked.begin(),
                         prediction.ranked.begin() + static_cast<std::ptrdiff_t>(k),
                         truth.label) != prediction.ranked.begin() + static_cast<std::ptrdiff_t>(k);
  o.iou = iou(prediction.gt_class_box, truth.box);
  o.gt_known = o.iou > kIouThreshold;
  o.top1_loc = o.top1_cls && o.gt_known;
  o.top5_loc = o.top5_cls && o.gt_known;
  return o;
}

MetricsReport evaluate(const std::vector<SamplePrediction>& predictions,
                       const std::vector<GroundTruth>& ground_truth) {
  if (predictions.size() != ground_truth.size()) {
    throw UsageError("evaluate: " + std::to_string(predictions.size()) + " predictions vs " +
                     std::to_string(ground_truth.size()) + " ground-truth samples");
  }
  std::size_t t1c = 0, t5c = 0, t1l = 0, t5l = 0, gtk = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const SampleOutcome o = score_sample(predictions[i], ground_truth[i]);
    t1c += o.top1_cls;
    t5c += o.top5_cls;
    t1l += o.top1_loc;
    t5l += o.top5_loc;
    gtk += o.gt_known;
  }
  MetricsReport r;
  r.n_samples = predictions.size();
  if (r.n_samples == 0) return r;
  const double n = static_cast<double>(r.n_samples);
  r.top1_cls = static_cast<double>(t1c) / n;
  r.top5_cls = static_cast<double>(t5c) / n;
  r.top1_loc = static_cast<double>(t1l) / n;
  r.top5_loc = static_cast<double>(t5l) / n;
  r.gt_known = static_cast<double>(gtk) / n;
  return r;
}

std::string format_metrics_text(const MetricsReport& report) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "top1_cls = %.6f\ntop5_cls = %.6f\ntop1_loc = %.6f\ntop5_loc = %.6f\n"
                "gt_known = %.6f\nn_samples = %zu\n",
                report.top1_cls, report.top5_cls, report.top1_loc, report.top5_loc,
                report.gt_known, report.n_samples);
  return buf;
}

std::string format_metrics_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["top1_cls"] = report.top1_cls;
  j["top5_cls"] = report.top5_cls;
  j["top1_loc"] = report.top1_loc;
  j["top5_loc"] = report.top5_loc;
  j["gt_known"] = report.gt_known;
  j["n_samples"] = report.n_samples;
  return j.dump(2) + "\n";
}

void write_metrics(const std::filesystem::path& dir, const MetricsReport& report) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "metrics.txt", std::ios::binary) << format_metrics_text(report);
  std::ofstream(dir / "metrics.json", std::ios::binary) << format_metrics_json(report);
}

void write_pgm(const std::filesystem::path& path, const Tensor& heatmap) {
  require_map(heatmap, "write_pgm");
  const std::size_t h = heatmap.dim(0), w = heatmap.dim(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << w << ' ' << h << "\n255\n";
  for (double v : heatmap.data()) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
}

void write_boxes_csv(const std::filesystem::path& path, const std::vector<BoxRecord>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "image_id,x0,y0,x1,y1,score\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.score);
    out << r.image_id << ',' << r.box.x0 << ',' << r.box.y0 << ',' << r.box.x1 << ','
        << r.box.y1 << ',' << buf << '\n';
  }
}

}  // namespace lctr::loc
