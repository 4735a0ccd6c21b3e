#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lctr/random.hpp"
#include "lctr/tensor.hpp"

namespace lctr {

/// Shape of the miniature vision transformer.
struct BackboneConfig {
  std::size_t image_size = 32;  // H = W
  std::size_t patch_size = 8;
  std::size_t embed_dim = 32;
  std::size_t num_heads = 4;
  std::size_t num_blocks = 4;
  double mlp_ratio = 4.0;
  std::size_t num_classes = 5;
  std::size_t channels = 3;

  /// Throws ConfigError when the extents are inconsistent.
  void validate() const;

  std::size_t grid_size() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid_size() * grid_size(); }
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t hidden_dim() const;
  std::size_t patch_length() const { return channels * patch_size * patch_size; }
};

/// Token matrix [(N+1) x D]; row 0 is the class token, rows 1..N are patch
/// tokens in row-major grid order.
struct TokenSequence {
  static constexpr std::size_t class_index = 0;
  Tensor tokens;
};

/// Post-softmax attention of every block.
struct AttentionRecord {
  std::vector<Tensor> per_block;  // L tensors [S x (N+1) x (N+1)]
  std::vector<Tensor> averaged;   // L tensors [(N+1) x (N+1)], head mean

  std::size_t num_blocks() const { return per_block.size(); }
};

struct BlockParams {
  Tensor norm1_gain, norm1_bias;
  Tensor qkv_weight, qkv_bias;    // [D x 3D], [3D]
  Tensor proj_weight, proj_bias;  // [D x D], [D]
  Tensor norm2_gain, norm2_bias;
  Tensor fc1_weight, fc1_bias;    // [D x hidden], [hidden]
  Tensor fc2_weight, fc2_bias;    // [hidden x D], [D]
};

struct BackboneParams {
  Tensor patch_weight;  // [3P^2 x D]
  Tensor patch_bias;    // [D]
  Tensor class_token;   // [1 x D]
  Tensor position;      // [(N+1) x D]
  std::vector<BlockParams> blocks;

  /// Truncated-normal(0.02) weights and embeddings, zero biases, unit
  /// layer-norm gains.
  static BackboneParams init(const BackboneConfig& config, Rng& rng);

  /// Appends every tensor under "<prefix>..." names.
  void register_into(ParameterList& list, const std::string& prefix) const;
};

struct BlockOutput {
  TokenSequence tokens;
  Tensor attention;  // [S x (N+1) x (N+1)]
};

struct BackboneOutput {
  Tensor patch_tokens;  // X_L without the class-token row: [N x D]
  AttentionRecord attention;
};

inline constexpr double kLayerNormEps = 1e-6;

TokenSequence embed(const Tensor& image, const BackboneConfig& config,
                    const BackboneParams& params);

/// Pre-norm transformer block: LN -> multi-head self-attention -> residual
/// -> LN -> GELU MLP -> residual.
BlockOutput block_forward(const TokenSequence& x, const BlockParams& params,
                          const BackboneConfig& config);

BackboneOutput backbone_forward(const Tensor& image, const BackboneConfig& config,
                                const BackboneParams& params);

/// X_L [N x D] -> feature map [D x grid x grid].
Tensor tokens_to_feature_map(const Tensor& patch_tokens, const BackboneConfig& config);

}  // namespace lctr
