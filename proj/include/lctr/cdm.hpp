#pragma once

#include <cstddef>
#include <string>

#include "lctr/random.hpp"
#include "lctr/tensor.hpp"
#include "lctr/vit.hpp"

// Cue digging: G learnable kernel groups scored from the feature map with
// its strongly attended regions erased, then combined into one kernel that
// maps X_L [D x h x w] to class maps [C x h x w].
namespace lctr::cdm {

struct CdmConfig {
  std::size_t num_kernel_groups = 4;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t num_classes = 5;
  std::size_t embed_dim = 32;

  void validate() const;
  /// Closed-form count of scalar parameters in CdmParams.
  std::size_t parameter_count() const;
};

struct CdmParams {
  Tensor erase_kernel;   // [D x D x 3 x 3]
  Tensor erase_bias;     // [D]
  Tensor gap_weight;     // [D x G]
  Tensor gap_bias;       // [G]
  Tensor gmp_weight;     // [D x G]
  Tensor gmp_bias;       // [G]
  Tensor group_kernels;  // [G x D x C x kh x kw]

  /// Group kernels: kaiming-uniform (fan-in, rectifier gain). Erase conv:
  /// uniform(+-1/sqrt(fan_in)) for weights and bias. Score heads:
  /// truncated normal(0.02) weights, zero bias.
  static CdmParams init(const CdmConfig& config, Rng& rng);
  void register_into(ParameterList& list, const std::string& prefix) const;
};

struct CdmOutput {
  Tensor reversed;      // [h x w], 1 - minmax(class-token map)
  Tensor scores;        // [G], in (0, 1)
  Tensor kernel;        // weighted kernel sum [D x C x kh x kw]
  Tensor class_maps;    // X_CDM [C x h x w]
};

/// Block mean of the class token's attention to the patches, reshaped to
/// the grid, min-max normalized and complemented. A constant map is fully
/// kept (all ones). Differentiable with respect to the attention.
Tensor reversed_class_map(const AttentionRecord& attention, std::size_t grid_h,
                          std::size_t grid_w);

/// S = sigmoid(fc_gap(GAP(X~)) + fc_gmp(GMP(X~))), X~ = conv3x3(X_L * reversed).
Tensor score_groups(const Tensor& features, const Tensor& reversed, const CdmParams& params);

/// sum_g S_g * W_g
Tensor weighted_kernel(const Tensor& scores, const Tensor& group_kernels);

CdmOutput cdm_forward(const Tensor& features, const AttentionRecord& attention,
                      const CdmParams& params, const CdmConfig& config);

/// GAP over class maps followed by softmax.
struct Classification {
  Tensor logits;  // [C]
  Tensor probs;   // [C]

  /// -log probs[label]; UsageError when label is out of range.
  Tensor loss(std::size_t label) const;
};

Classification classify(const Tensor& class_maps);

}  // namespace lctr::cdm
