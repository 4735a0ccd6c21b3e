#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "lctr/config.hpp"
#include "lctr/dataset.hpp"
#include "lctr/evaluation.hpp"
#include "lctr/model.hpp"
#include "lctr/rpam.hpp"
#include "support.hpp"

using namespace lctr;
using namespace lctr::rpam;

namespace {

Tensor row_stochastic(std::size_t n, Rng& rng) {
  std::vector<double> v(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += v[i * n + j] = rng.uniform(0.01, 1.0);
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] /= total;
  }
  return Tensor::from({n, n}, std::move(v));
}

Tensor uniform_attention(std::size_t n) {
  return Tensor::full({n, n}, 1.0 / static_cast<double>(n));
}

AttentionRecord record_of(const std::vector<Tensor>& averaged) {
  AttentionRecord rec;
  for (const Tensor& a : averaged) {
    rec.per_block.push_back(reshape(a, {1, a.dim(0), a.dim(1)}));
    rec.averaged.push_back(a);
  }
  return rec;
}

std::vector<double> oracle_relation(const Tensor& a) {
  const std::size_t n1 = a.dim(0), n = n1 - 1;
  std::vector<double> out(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n1; ++i) out[j] += a.at({0, i}) * a.at({i, j + 1});
    out[j] /= static_cast<double>(n1);
  }
  return out;
}

}  // namespace

TEST_CASE("class token vector") {
  const Tensor u = class_token_vector(uniform_attention(5));
  for (double v : u.data()) CHECK(v == 0.2);

  const Tensor hand = Tensor::from({3, 3}, {0.5, 0.3, 0.2, 0.1, 0.1, 0.8, 0.3, 0.3, 0.4});
  CHECK(class_token_vector(hand).to_vector() == std::vector<double>{0.5, 0.3, 0.2});

  Rng rng(1);
  const Tensor r = row_stochastic(7, rng);
  const auto c = class_token_vector(r).to_vector();
  CHECK(std::abs(std::accumulate(c.begin(), c.end(), 0.0) - 1.0) < 1e-9);
}

TEST_CASE("patch attention map") {
  const Tensor hand = Tensor::from({3, 3}, {0.5, 0.3, 0.2, 0.1, 0.1, 0.8, 0.3, 0.3, 0.4});
  const Tensor p = patch_attention_map(hand);
  CHECK(p.shape() == Shape{3, 2});
  CHECK(p.to_vector() == std::vector<double>{0.3, 0.2, 0.1, 0.8, 0.3, 0.4});

  Rng rng(2);
  const Tensor r = patch_attention_map(row_stochastic(6, rng));
  for (std::size_t i = 0; i < 6; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 5; ++j) total += r.at({i, j});
    CHECK(total <= 1.0);
  }
  const Tensor u = patch_attention_map(uniform_attention(4));
  for (double v : u.data()) CHECK(v == 0.25);
}

TEST_CASE("block relation vector") {
  const Tensor u = block_relation_vector(uniform_attention(4));
  for (double v : u.data()) {
    CHECK(std::abs(v - 1.0 / 16.0) < 1e-15);
  }

  SUBCASE("one-hot class-token row selects a single patch-attention row") {
    Rng rng(3);
    Tensor a = row_stochastic(5, rng);
    const std::size_t t = 2;
    auto d = a.mutable_data();
    for (std::size_t j = 0; j < 5; ++j) d[j] = j == t ? 1.0 : 0.0;
    const auto v = block_relation_vector(a).to_vector();
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(v[j] - a.at({t, j + 1}) / 5.0) < 1e-15);
  }

  SUBCASE("double-loop oracle") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor a = row_stochastic(5, rng);
      const auto v = block_relation_vector(a).to_vector();
      const auto ref = oracle_relation(a);
      for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(v[j] - ref[j]) < 1e-12);
    }
  }

  SUBCASE("scaling the attention by c scales the result by c squared") {
    Rng rng(5);
    const Tensor a = row_stochastic(6, rng);
    const double c = 0.37;
    const auto base = block_relation_vector(a).to_vector();
    const auto scaled = block_relation_vector(affine(a, c)).to_vector();
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(scaled[j] - c * c * base[j]) < 1e-15);
  }

  SUBCASE("permutation equivariance") {
    Rng rng(6);
    const std::size_t n = 6;  // five patches
    const Tensor a = row_stochastic(n, rng);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};  // patch k moves to slot perm[k]
    std::vector<std::size_t> full(n);
    full[0] = 0;
    for (std::size_t k = 0; k < 5; ++k) full[k + 1] = perm[k] + 1;
    std::vector<double> permuted(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) permuted[full[i] * n + full[j]] = a.at({i, j});
    const auto base = block_relation_vector(a).to_vector();
    const auto moved = block_relation_vector(Tensor::from({n, n}, permuted)).to_vector();
    for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(moved[perm[k]] - base[k]) < 1e-15);
  }
}

TEST_CASE("patch relation map") {
  Rng rng(7);
  SUBCASE("single block is a reshape") {
    const Tensor a = row_stochastic(10, rng);
    const PatchRelationMap m = build_patch_relation_map(record_of({a}), 3, 3);
    CHECK(m.source_blocks == 1);
    CHECK(m.map.shape() == Shape{3, 3});
    CHECK(m.map.to_vector() == block_relation_vector(a).to_vector());
  }
  SUBCASE("uniform blocks give the closed form") {
    const PatchRelationMap m = build_patch_relation_map(
        record_of({uniform_attention(5), uniform_attention(5), uniform_attention(5)}), 2, 2);
    for (double v : m.map.data()) CHECK(std::abs(v - 1.0 / 25.0) < 1e-12);
  }
  SUBCASE("block mean oracle") {
    const std::vector<Tensor> blocks{row_stochastic(7, rng), row_stochastic(7, rng),
                                     row_stochastic(7, rng)};
    const PatchRelationMap m = build_patch_relation_map(record_of(blocks), 2, 3);
    CHECK(m.map.shape() == Shape{2, 3});
    std::vector<double> ref(6, 0.0);
    for (const Tensor& b : blocks) {
      const auto v = oracle_relation(b);
      for (std::size_t j = 0; j < 6; ++j) ref[j] += v[j];
    }
    for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(m.map.data()[j] - ref[j] / 3.0) < 1e-12);
  }
  SUBCASE("bounds") {
    const std::vector<Tensor> blocks{row_stochastic(10, rng), row_stochastic(10, rng)};
    const PatchRelationMap m = build_patch_relation_map(record_of(blocks), 3, 3);
    double max_class = 0.0;
    for (const Tensor& b : blocks)
      for (double v : class_token_vector(b).to_vector()) max_class = std::max(max_class, v);
    double total = 0.0;
    for (double v : m.map.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      total += v;
    }
    CHECK(total <= 9.0 * max_class);
  }
  SUBCASE("grid must match the patch count") {
    CHECK_THROWS_AS(build_patch_relation_map(record_of({uniform_attention(5)}), 3, 3),
                    DimensionError);
  }
}

TEST_CASE("debug dump") {
  Rng rng(8);
  const auto dir = std::filesystem::temp_directory_path() / "lctr_test_rpam_dump";
  std::filesystem::remove_all(dir);
  dump_debug_csv(record_of({row_stochastic(5, rng), row_stochastic(5, rng)}), 2, 2, dir);
  for (const char* name : {"class_token_block0.csv", "class_token_block1.csv",
                           "relation_block0.csv", "relation_block1.csv", "relation_map.csv"}) {
    CHECK(std::filesystem::exists(dir / name));
  }
  std::ifstream in(dir / "relation_map.csv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 1);
  }
  CHECK(rows == 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("relation map adds no parameters and leaves classification unchanged") {
  RunConfig config;
  config.backbone.image_size = 32;
  config.backbone.embed_dim = 8;
  config.backbone.num_heads = 2;
  config.backbone.num_blocks = 2;
  config.backbone.num_classes = 3;
  config.n_test = 6;
  config.finalize();
  const LctrModel model(config);
  RunConfig off = config;
  off.rpam_enabled = false;
  const LctrModel model_off(off);
  CHECK(model.parameters().scalar_count() == model_off.parameters().scalar_count());

  const auto data = data::generate_dataset(1, 6, 32, 3, 4);
  const auto with = infer(model, data.test, true);
  const auto without = infer(model, data.test, false);
  for (std::size_t i = 0; i < with.size(); ++i) {
    CHECK(with[i].probs == without[i].probs);
    CHECK(with[i].relation_map.defined());
    CHECK(!without[i].relation_map.defined());
  }
}
