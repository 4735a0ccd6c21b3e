#include "lctr/cdm.hpp"

#include <cmath>

#include "lctr/ops.hpp"

namespace lctr::cdm {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(values), true);
}

}  // namespace

void CdmConfig::validate() const {
  if (num_kernel_groups == 0) throw ConfigError("cdm: num_kernel_groups must be >= 1");
  if (kernel_h % 2 == 0 || kernel_w % 2 == 0 || kernel_h != kernel_w) {
    throw ConfigError("cdm: kernel extents must be odd and square, got " +
                      std::to_string(kernel_h) + "x" + std::to_string(kernel_w));
  }
  if (num_classes < 2) throw ConfigError("cdm: num_classes must be >= 2");
  if (embed_dim == 0) throw ConfigError("cdm: embed_dim must be positive");
}

std::size_t CdmConfig::parameter_count() const {
  const std::size_t d = embed_dim, g = num_kernel_groups;
  return d * d * 9 + d            // erase conv
         + 2 * (d * g + g)        // score heads
         + g * d * num_classes * kernel_h * kernel_w;
}

CdmParams CdmParams::init(const CdmConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.embed_dim, g = config.num_kernel_groups;
  CdmParams p;
  const double erase_bound = 1.0 / std::sqrt(static_cast<double>(d * 9));
  p.erase_kernel = uniform_tensor({d, d, 3, 3}, erase_bound, rng);
  p.erase_bias = uniform_tensor({d}, erase_bound, rng);

  auto trunc = [&rng](Shape shape) {
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = rng.truncated_normal(0.02);
    return Tensor::from(std::move(shape), std::move(values), true);
  };
  p.gap_weight = trunc({d, g});
  p.gap_bias = Tensor::zeros({g}, true);
  p.gmp_weight = trunc({d, g});
  p.gmp_bias = Tensor::zeros({g}, true);

  // Kaiming uniform, fan-in mode with the rectifier gain sqrt(2):
  // bound = sqrt(2) * sqrt(3 / fan_in).
  const double fan_in = static_cast<double>(d * config.kernel_h * config.kernel_w);
  const double kaiming_bound = std::sqrt(6.0 / fan_in);
  p.group_kernels = uniform_tensor({g, d, config.num_classes, config.kernel_h, config.kernel_w},
                                   kaiming_bound, rng);
  return p;
}

void CdmParams::register_into(ParameterList& list, const std::string& prefix) const {
  list.add(prefix + "erase_conv.weight", erase_kernel);
  list.add(prefix + "erase_conv.bias", erase_bias);
  list.add(prefix + "score_gap.weight", gap_weight);
  list.add(prefix + "score_gap.bias", gap_bias);
  list.add(prefix + "score_gmp.weight", gmp_weight);
  list.add(prefix + "score_gmp.bias", gmp_bias);
  list.add(prefix + "group_kernels", group_kernels);
}

Tensor reversed_class_map(const AttentionRecord& attention, std::size_t grid_h,
                          std::size_t grid_w) {
  if (attention.averaged.empty()) throw DimensionError("reversed_class_map: empty record");
  const std::size_t patches = grid_h * grid_w;
  std::vector<Tensor> rows;
  for (const Tensor& averaged : attention.averaged) {
    if (averaged.rank() != 2 || averaged.dim(0) != patches + 1 ||
        averaged.dim(1) != patches + 1) {
      throw DimensionError("reversed_class_map: attention " +
                           shape_to_string(averaged.shape()) + " does not match a " +
                           std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
    }
    rows.push_back(narrow(narrow(averaged, 0, 0, 1), 1, 1, patches));
  }
  Tensor mean_map = reshape(mean_leading(concat(rows, 0)), {grid_h, grid_w});
  return affine(min_max_normalize(mean_map), -1.0, 1.0);
}

Tensor score_groups(const Tensor& features, const Tensor& reversed, const CdmParams& params) {
  if (features.rank() != 3 || reversed.rank() != 2 || features.dim(1) != reversed.dim(0) ||
      features.dim(2) != reversed.dim(1)) {
    throw DimensionError("score_groups: features " + shape_to_string(features.shape()) +
                         " and map " + shape_to_string(reversed.shape()) + " disagree");
  }
  Tensor erased = conv2d(mul(features, reversed), params.erase_kernel, params.erase_bias, 1);
  const std::size_t d = erased.dim(0);
  Tensor avg = reshape(global_avg_pool(erased), {1, d});
  Tensor peak = reshape(global_max_pool(erased), {1, d});
  Tensor logits = add(linear(avg, params.gap_weight, params.gap_bias),
                      linear(peak, params.gmp_weight, params.gmp_bias));
  return reshape(sigmoid(logits), {logits.numel()});
}

Tensor weighted_kernel(const Tensor& scores, const Tensor& group_kernels) {
  if (group_kernels.rank() != 5 || scores.rank() != 1 ||
      scores.dim(0) != group_kernels.dim(0)) {
    throw DimensionError("weighted_kernel: scores " + shape_to_string(scores.shape()) +
                         " vs kernels " + shape_to_string(group_kernels.shape()));
  }
  const Shape& ks = group_kernels.shape();
  const Shape one{ks[1], ks[2], ks[3], ks[4]};
  Tensor total;
  for (std::size_t g = 0; g < ks[0]; ++g) {
    Tensor kernel = reshape(narrow(group_kernels, 0, g, 1), one);
    Tensor term = scale_by(kernel, narrow(scores, 0, g, 1));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

CdmOutput cdm_forward(const Tensor& features, const AttentionRecord& attention,
                      const CdmParams& params, const CdmConfig& config) {
  if (features.rank() != 3 || features.dim(0) != config.embed_dim) {
    throw DimensionError("cdm_forward: features " + shape_to_string(features.shape()) +
                         " do not have " + std::to_string(config.embed_dim) + " channels");
  }
  CdmOutput out;
  out.reversed = reversed_class_map(attention, features.dim(1), features.dim(2));
  out.scores = score_groups(features, out.reversed, params);
  out.kernel = weighted_kernel(out.scores, params.group_kernels);
  out.class_maps = conv2d(features, out.kernel, config.kernel_h / 2);
  return out;
}

Tensor Classification::loss(std::size_t label) const { return cross_entropy(logits, label); }

Classification classify(const Tensor& class_maps) {
  if (!class_maps.defined() || class_maps.rank() != 3 || class_maps.dim(0) < 2) {
    throw DimensionError("classify: expected [C x h x w] with C >= 2");
  }
  Classification out;
  out.logits = global_avg_pool(class_maps);
  out.probs = softmax(out.logits, 0);
  return out;
}

}  // namespace lctr::cdm
