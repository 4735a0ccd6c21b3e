#include "lctr/vit.hpp"

#include <cmath>

#include "lctr/ops.hpp"

namespace lctr {

namespace {

constexpr double kInitStd = 0.02;

Tensor trunc_normal(Shape shape, Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.truncated_normal(kInitStd);
  return Tensor::from(std::move(shape), std::move(values), true);
}

}  // namespace

void BackboneConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("backbone: " + what); };
  if (image_size == 0 || patch_size == 0) fail("image and patch size must be positive");
  if (image_size % patch_size != 0) {
    fail("image size " + std::to_string(image_size) + " not divisible by patch size " +
         std::to_string(patch_size));
  }
  if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
    fail("embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
         std::to_string(num_heads));
  }
  if (num_blocks == 0) fail("num_blocks must be positive");
  if (!(mlp_ratio > 0.0) || hidden_dim() == 0) fail("mlp_ratio must be positive");
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (channels == 0) fail("channels must be positive");
}

std::size_t BackboneConfig::hidden_dim() const {
  return static_cast<std::size_t>(std::lround(static_cast<double>(embed_dim) * mlp_ratio));
}

BackboneParams BackboneParams::init(const BackboneConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.embed_dim;
  const std::size_t hidden = config.hidden_dim();
  BackboneParams p;
  p.patch_weight = trunc_normal({config.patch_length(), d}, rng);
  p.patch_bias = Tensor::zeros({d}, true);
  p.class_token = trunc_normal({1, d}, rng);
  p.position = trunc_normal({config.num_tokens(), d}, rng);
  for (std::size_t l = 0; l < config.num_blocks; ++l) {
    BlockParams b;
    b.norm1_gain = Tensor::full({d}, 1.0, true);
    b.norm1_bias = Tensor::zeros({d}, true);
    b.qkv_weight = trunc_normal({d, 3 * d}, rng);
    b.qkv_bias = Tensor::zeros({3 * d}, true);
    b.proj_weight = trunc_normal({d, d}, rng);
    b.proj_bias = Tensor::zeros({d}, true);
    b.norm2_gain = Tensor::full({d}, 1.0, true);
    b.norm2_bias = Tensor::zeros({d}, true);
    b.fc1_weight = trunc_normal({d, hidden}, rng);
    b.fc1_bias = Tensor::zeros({hidden}, true);
    b.fc2_weight = trunc_normal({hidden, d}, rng);
    b.fc2_bias = Tensor::zeros({d}, true);
    p.blocks.push_back(std::move(b));
  }
  return p;
}

void BackboneParams::register_into(ParameterList& list, const std::string& prefix) const {
  list.add(prefix + "patch_embed.weight", patch_weight);
  list.add(prefix + "patch_embed.bias", patch_bias);
  list.add(prefix + "cls_token", class_token);
  list.add(prefix + "pos_embed", position);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const BlockParams& b = blocks[l];
    const std::string base = prefix + "blocks." + std::to_string(l) + ".";
    list.add(base + "norm1.gain", b.norm1_gain);
    list.add(base + "norm1.bias", b.norm1_bias);
    list.add(base + "attn.qkv.weight", b.qkv_weight);
    list.add(base + "attn.qkv.bias", b.qkv_bias);
    list.add(base + "attn.proj.weight", b.proj_weight);
    list.add(base + "attn.proj.bias", b.proj_bias);
    list.add(base + "norm2.gain", b.norm2_gain);
    list.add(base + "norm2.bias", b.norm2_bias);
    list.add(base + "mlp.fc1.weight", b.fc1_weight);
    list.add(base + "mlp.fc1.bias", b.fc1_bias);
    list.add(base + "mlp.fc2.weight", b.fc2_weight);
    list.add(base + "mlp.fc2.bias", b.fc2_bias);
  }
}

TokenSequence embed(const Tensor& image, const BackboneConfig& config,
                    const BackboneParams& params) {
  config.validate();
  const Shape expected{config.channels, config.image_size, config.image_size};
  if (!image.defined() || image.shape() != expected) {
    throw DimensionError("embed: image must be " + shape_to_string(expected) + ", got " +
                         (image.defined() ? shape_to_string(image.shape()) : "undefined"));
  }
  Tensor patches = patchify(image, config.patch_size);
  Tensor projected = linear(patches, params.patch_weight, params.patch_bias);
  Tensor tokens = concat({params.class_token, projected}, 0);
  return TokenSequence{add(tokens, params.position)};
}

BlockOutput block_forward(const TokenSequence& x, const BlockParams& params,
                          const BackboneConfig& config) {
  const std::size_t d = config.embed_dim;
  const std::size_t heads = config.num_heads;
  const std::size_t head_dim = config.head_dim();
  if (x.tokens.rank() != 2 || x.tokens.dim(1) != d) {
    throw DimensionError("block_forward: tokens " + shape_to_string(x.tokens.shape()) +
                         " do not have width " + std::to_string(d));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Tensor h = layer_norm(x.tokens, params.norm1_gain, params.norm1_bias, kLayerNormEps);
  Tensor qkv = linear(h, params.qkv_weight, params.qkv_bias);
  std::vector<Tensor> head_outputs;
  std::vector<Tensor> head_attention;
  for (std::size_t s = 0; s < heads; ++s) {
    Tensor q = narrow(qkv, 1, s * head_dim, head_dim);
    Tensor k = narrow(qkv, 1, d + s * head_dim, head_dim);
    Tensor v = narrow(qkv, 1, 2 * d + s * head_dim, head_dim);
    Tensor attn = softmax(affine(matmul(q, transpose(k)), scale), 1);
    head_outputs.push_back(matmul(attn, v));
    head_attention.push_back(attn);
  }
  Tensor mixed = linear(concat(head_outputs, 1), params.proj_weight, params.proj_bias);
  Tensor residual = add(x.tokens, mixed);

  Tensor h2 = layer_norm(residual, params.norm2_gain, params.norm2_bias, kLayerNormEps);
  Tensor mlp = linear(gelu(linear(h2, params.fc1_weight, params.fc1_bias)),
                      params.fc2_weight, params.fc2_bias);
  return BlockOutput{TokenSequence{add(residual, mlp)}, stack(head_attention)};
}

BackboneOutput backbone_forward(const Tensor& image, const BackboneConfig& config,
                                const BackboneParams& params) {
  if (params.blocks.size() != config.num_blocks) {
    throw DimensionError("backbone_forward: parameters hold " +
                         std::to_string(params.blocks.size()) + " blocks, config expects " +
                         std::to_string(config.num_blocks));
  }
  TokenSequence x = embed(image, config, params);
  BackboneOutput out;
  for (const BlockParams& block : params.blocks) {
    BlockOutput step = block_forward(x, block, config);
    out.attention.averaged.push_back(mean_leading(step.attention));
    out.attention.per_block.push_back(std::move(step.attention));
    x = std::move(step.tokens);
  }
  out.patch_tokens = narrow(x.tokens, 0, 1, config.num_patches());
  return out;
}

Tensor tokens_to_feature_map(const Tensor& patch_tokens, const BackboneConfig& config) {
  const std::size_t g = config.grid_size();
  return reshape(transpose(patch_tokens), {config.embed_dim, g, g});
}

}  // namespace lctr
