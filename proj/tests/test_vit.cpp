#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lctr/checkpoint.hpp"
#include "lctr/ops.hpp"
#include "lctr/vit.hpp"
#include "support.hpp"

using namespace lctr;
using lctr::testing::random_tensor;

namespace {

BackboneConfig small_config() {
  BackboneConfig c;
  c.image_size = 16;
  c.patch_size = 8;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.num_blocks = 2;
  c.mlp_ratio = 2.0;
  c.num_classes = 3;
  return c;
}

void check_rows_sum_to_one(const AttentionRecord& rec, double tol) {
  for (const Tensor& a : rec.per_block) {
    const std::size_t heads = a.dim(0), n = a.dim(1);
    for (std::size_t s = 0; s < heads; ++s)
      for (std::size_t i = 0; i < n; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) total += a.at({s, i, j});
        CHECK(std::abs(total - 1.0) < tol);
      }
  }
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("lctr_test_" + name);
}

}  // namespace

TEST_CASE("config validation") {
  BackboneConfig c = small_config();
  c.image_size = 20;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  CHECK(c.num_patches() == 4);
  CHECK(c.num_tokens() == 5);
  CHECK(c.patch_length() == 3 * 64);
}

TEST_CASE("embed") {
  const BackboneConfig c = small_config();
  Rng rng(1);
  const BackboneParams p = BackboneParams::init(c, rng);

  SUBCASE("token count") {
    Tensor img = random_tensor({3, 16, 16}, rng, 0, 1);
    CHECK(embed(img, c, p).tokens.shape() == Shape{5, 8});
  }
  SUBCASE("zero image exposes position rows") {
    const TokenSequence t = embed(Tensor::zeros({3, 16, 16}), c, p);
    for (std::size_t r = 1; r < 5; ++r)
      for (std::size_t k = 0; k < 8; ++k) CHECK(t.tokens.at({r, k}) == p.position.at({r, k}));
    for (std::size_t k = 0; k < 8; ++k)
      CHECK(t.tokens.at({0, k}) == p.class_token.at({0, k}) + p.position.at({0, k}));
  }
  SUBCASE("marker pixel perturbs exactly its own token") {
    Tensor base = random_tensor({3, 16, 16}, rng, 0, 1);
    const Tensor ref = embed(base, c, p).tokens;
    struct Probe {
      std::size_t y, x, token;
    };
    for (const Probe probe : {Probe{0, 0, 1}, Probe{3, 12, 2}, Probe{9, 1, 3}, Probe{15, 15, 4}}) {
      Tensor img = base.clone();
      img.mutable_data()[(1 * 16 + probe.y) * 16 + probe.x] += 1.0;
      const Tensor out = embed(img, c, p).tokens;
      for (std::size_t r = 0; r < 5; ++r) {
        bool changed = false;
        for (std::size_t k = 0; k < 8; ++k) changed |= out.at({r, k}) != ref.at({r, k});
        CHECK(changed == (r == probe.token));
      }
    }
  }
  SUBCASE("wrong image extent") {
    CHECK_THROWS_AS(embed(Tensor::zeros({3, 8, 8}), c, p), DimensionError);
  }
}

TEST_CASE("block attention") {
  const BackboneConfig c = small_config();
  Rng rng(2);
  BackboneParams p = BackboneParams::init(c, rng);
  const TokenSequence x{random_tensor({5, 8}, rng)};

  SUBCASE("rows sum to one") {
    const BlockOutput out = block_forward(x, p.blocks[0], c);
    CHECK(out.attention.shape() == Shape{2, 5, 5});
    CHECK(out.tokens.tokens.shape() == Shape{5, 8});
    AttentionRecord rec;
    rec.per_block.push_back(out.attention);
    check_rows_sum_to_one(rec, 1e-9);
  }
  SUBCASE("zeroed norm affine gives uniform attention") {
    BlockParams b = p.blocks[0];
    b.norm1_gain = Tensor::zeros({8});
    b.norm1_bias = Tensor::zeros({8});
    const Tensor a = block_forward(x, b, c).attention;
    for (double v : a.data()) CHECK(std::abs(v - 0.2) < 1e-15);
  }
}

TEST_CASE("single head, two tokens, hand evaluation") {
  BackboneConfig c;
  c.image_size = 8;
  c.patch_size = 8;
  c.embed_dim = 2;
  c.num_heads = 1;
  c.num_blocks = 1;
  c.mlp_ratio = 1.0;
  c.num_classes = 2;
  BlockParams b;
  b.norm1_gain = Tensor::full({2}, 1.0);
  b.norm1_bias = Tensor::zeros({2});
  // Columns 0-1 are W_q = I, 2-3 are W_k = diag(1, 2), 4-5 are W_v = I.
  b.qkv_weight = Tensor::from({2, 6}, {1, 0, 1, 0, 1, 0,  //
                                       0, 1, 0, 2, 0, 1});
  b.qkv_bias = Tensor::zeros({6});
  b.proj_weight = Tensor::from({2, 2}, {1, 0, 0, 1});
  b.proj_bias = Tensor::zeros({2});
  b.norm2_gain = Tensor::full({2}, 1.0);
  b.norm2_bias = Tensor::zeros({2});
  b.fc1_weight = Tensor::zeros({2, 2});
  b.fc1_bias = Tensor::zeros({2});
  b.fc2_weight = Tensor::zeros({2, 2});
  b.fc2_bias = Tensor::zeros({2});

  const TokenSequence x{Tensor::from({2, 2}, {0, 1, 2, 0})};
  const Tensor a = block_forward(x, b, c).attention;

  // Row 0 = [0, 1] normalizes to [-s0, s0], row 1 = [2, 0] to [s1, -s1],
  // with s0 = 0.5 / sqrt(0.25 + eps) and s1 = 1 / sqrt(1 + eps).
  // k0 = [-s0, 2 s0], k1 = [s1, -2 s1].
  const double s0 = 0.5 / std::sqrt(0.25 + kLayerNormEps);
  const double s1 = 1.0 / std::sqrt(1.0 + kLayerNormEps);
  const double r = std::sqrt(2.0);
  auto softmax2 = [](double u, double v) { return std::exp(u) / (std::exp(u) + std::exp(v)); };
  const double p00 = softmax2(3 * s0 * s0 / r, -3 * s0 * s1 / r);
  const double p11 = softmax2(3 * s1 * s1 / r, -3 * s0 * s1 / r);
  CHECK(std::abs(a.at({0, 0, 0}) - p00) < 1e-12);
  CHECK(std::abs(a.at({0, 0, 1}) - (1.0 - p00)) < 1e-12);
  CHECK(std::abs(a.at({0, 1, 1}) - p11) < 1e-12);
  CHECK(std::abs(a.at({0, 1, 0}) - (1.0 - p11)) < 1e-12);
}

TEST_CASE("backbone forward") {
  BackboneConfig c = small_config();
  Rng rng(3);
  const Tensor img = random_tensor({3, 16, 16}, rng, 0, 1);

  SUBCASE("shapes and record length") {
    for (std::size_t blocks : {1u, 3u}) {
      c.num_blocks = blocks;
      Rng r(4);
      const BackboneParams p = BackboneParams::init(c, r);
      const BackboneOutput out = backbone_forward(img, c, p);
      CHECK(out.patch_tokens.shape() == Shape{4, 8});
      CHECK(out.attention.num_blocks() == blocks);
      CHECK(out.attention.averaged.size() == blocks);
      CHECK(tokens_to_feature_map(out.patch_tokens, c).shape() == Shape{8, 2, 2});
    }
  }
  SUBCASE("one block equals embed composed with block_forward") {
    c.num_blocks = 1;
    const BackboneParams p = BackboneParams::init(c, rng);
    const BackboneOutput out = backbone_forward(img, c, p);
    const BlockOutput manual = block_forward(embed(img, c, p), p.blocks[0], c);
    CHECK(out.patch_tokens.to_vector() == narrow(manual.tokens.tokens, 0, 1, 4).to_vector());
    CHECK(out.attention.per_block[0].to_vector() == manual.attention.to_vector());
  }
  SUBCASE("head mean is exact") {
    const BackboneParams p = BackboneParams::init(c, rng);
    const BackboneOutput out = backbone_forward(img, c, p);
    for (std::size_t l = 0; l < c.num_blocks; ++l) {
      const Tensor& a = out.attention.per_block[l];
      const Tensor& mean = out.attention.averaged[l];
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
          double total = 0.0;
          for (std::size_t s = 0; s < c.num_heads; ++s) total += a.at({s, i, j});
          CHECK(mean.at({i, j}) == total / static_cast<double>(c.num_heads));
        }
    }
    check_rows_sum_to_one(out.attention, 1e-9);
  }
  SUBCASE("feature map is row-major over the patch grid") {
    const BackboneParams p = BackboneParams::init(c, rng);
    const BackboneOutput out = backbone_forward(img, c, p);
    const Tensor fm = tokens_to_feature_map(out.patch_tokens, c);
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t d = 0; d < 8; ++d) CHECK(fm.at({d, n / 2, n % 2}) == out.patch_tokens.at({n, d}));
  }
  SUBCASE("gradient reaches the patch projection") {
    const BackboneParams p = BackboneParams::init(c, rng);
    ParameterList list;
    p.register_into(list, "backbone.");
    const BackboneOutput out = backbone_forward(img, c, p);
    Tensor logits = global_avg_pool(tokens_to_feature_map(out.patch_tokens, c));
    cross_entropy(narrow(logits, 0, 0, 3), 1).backward();
    REQUIRE(p.patch_weight.has_grad());
    double norm = 0.0;
    for (double g : p.patch_weight.grad()) norm += g * g;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("checkpoint") {
  const BackboneConfig c = small_config();
  Rng rng_a(5), rng_b(6);
  const BackboneParams pa = BackboneParams::init(c, rng_a);
  const BackboneParams pb = BackboneParams::init(c, rng_b);
  ParameterList a, b;
  pa.register_into(a, "backbone.");
  pb.register_into(b, "backbone.");
  CHECK(parameter_checksum(a) != parameter_checksum(b));

  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, a);
  {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == kCheckpointVersion);
  }
  const auto entries = read_checkpoint(path);
  REQUIRE(entries.size() == a.size());
  CHECK(entries[0].name == "backbone.patch_embed.weight");
  CHECK(entries[0].offset == 0);
  CHECK(entries[1].offset == 8 * a.items()[0].tensor.numel());

  load_checkpoint(path, b);
  CHECK(parameter_checksum(a) == parameter_checksum(b));
  Rng rng(7);
  const Tensor img = random_tensor({3, 16, 16}, rng, 0, 1);
  CHECK(backbone_forward(img, c, pa).patch_tokens.to_vector() ==
        backbone_forward(img, c, pb).patch_tokens.to_vector());

  SUBCASE("shape mismatch is reported by name") {
    BackboneConfig wide = c;
    wide.embed_dim = 12;
    Rng r(8);
    ParameterList w;
    BackboneParams::init(wide, r).register_into(w, "backbone.");
    try {
      load_checkpoint(path, w);
      FAIL("expected a checkpoint error");
    } catch (const CheckpointError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("backbone.patch_embed.weight") != std::string::npos);
      CHECK(msg.find("[192x8]") != std::string::npos);
    }
  }
  SUBCASE("missing parameters are reported") {
    BackboneConfig deep = c;
    deep.num_blocks = 3;
    Rng r(9);
    ParameterList d;
    BackboneParams::init(deep, r).register_into(d, "backbone.");
    CHECK_THROWS_AS(load_checkpoint(path, d), CheckpointError);
  }
  SUBCASE("truncated file") {
    const auto cut = temp_path("cut.ckpt");
    std::filesystem::copy_file(path, cut, std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(cut, std::filesystem::file_size(cut) - 8);
    CHECK_THROWS_AS(read_checkpoint(cut), CheckpointError);
    std::filesystem::remove(cut);
  }
  std::filesystem::remove(path);
}
