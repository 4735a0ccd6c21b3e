#include "lctr/rpam.hpp"

#include <fstream>
#include <iomanip>

namespace lctr::rpam {

namespace {

std::size_t check_square(const Tensor& averaged, const char* op) {
  if (!averaged.defined() || averaged.rank() != 2 || averaged.dim(0) != averaged.dim(1) ||
      averaged.dim(0) < 2) {
    throw DimensionError(std::string(op) + ": expected [(N+1) x (N+1)] attention, got " +
                         (averaged.defined() ? shape_to_string(averaged.shape())
                                             : std::string("undefined")));
  }
  return averaged.dim(0);
}

void write_matrix_csv(const std::filesystem::path& path, std::span<const double> values,
                      std::size_t rows, std::size_t cols) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) out << ',';
      out << values[r * cols + c];
    }
    out << '\n';
  }
}

}  // namespace

Tensor class_token_vector(const Tensor& averaged) {
  const std::size_t tokens = check_square(averaged, "class_token_vector");
  auto a = averaged.data();
  return Tensor::from({tokens}, {a.begin(), a.begin() + static_cast<std::ptrdiff_t>(tokens)});
}

Tensor patch_attention_map(const Tensor& averaged) {
  const std::size_t tokens = check_square(averaged, "patch_attention_map");
  const std::size_t patches = tokens - 1;
  auto a = averaged.data();
  std::vector<double> out(tokens * patches);
  for (std::size_t i = 0; i < tokens; ++i) {
    for (std::size_t j = 0; j < patches; ++j) out[i * patches + j] = a[i * tokens + 1 + j];
  }
  return Tensor::from({tokens, patches}, std::move(out));
}

Tensor block_relation_vector(const Tensor& averaged) {
  const std::size_t tokens = check_square(averaged, "block_relation_vector");
  const std::size_t patches = tokens - 1;
  auto a = averaged.data();
  // Weighted rows M_h[i, j] = M_c[i] * M_p[i, j], squeezed by a row mean.
  std::vector<double> out(patches, 0.0);
  for (std::size_t i = 0; i < tokens; ++i) {
    const double weight = a[i];
    for (std::size_t j = 0; j < patches; ++j) out[j] += weight * a[i * tokens + 1 + j];
  }
  for (double& v : out) v /= static_cast<double>(tokens);
  return Tensor::from({patches}, std::move(out));
}

PatchRelationMap build_patch_relation_map(const AttentionRecord& attention,
                                          std::size_t grid_h, std::size_t grid_w) {
  if (attention.averaged.empty()) {
    throw DimensionError("build_patch_relation_map: empty attention record");
  }
  const std::size_t patches = grid_h * grid_w;
  std::vector<double> total(patches, 0.0);
  for (const Tensor& averaged : attention.averaged) {
    Tensor relation = block_relation_vector(averaged);
    if (relation.numel() != patches) {
      throw DimensionError("build_patch_relation_map: " + std::to_string(relation.numel()) +
                           " patches do not fill a " + std::to_string(grid_h) + "x" +
                           std::to_string(grid_w) + " grid");
    }
    auto r = relation.data();
    for (std::size_t j = 0; j < patches; ++j) total[j] += r[j];
  }
  const double blocks = static_cast<double>(attention.averaged.size());
  for (double& v : total) v /= blocks;
  return PatchRelationMap{Tensor::from({grid_h, grid_w}, std::move(total)),
                          attention.averaged.size()};
}

void dump_debug_csv(const AttentionRecord& attention, std::size_t grid_h,
                    std::size_t grid_w, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t l = 0; l < attention.averaged.size(); ++l) {
    Tensor cls = class_token_vector(attention.averaged[l]);
    Tensor rel = block_relation_vector(attention.averaged[l]);
    write_matrix_csv(dir / ("class_token_block" + std::to_string(l) + ".csv"), cls.data(), 1,
                     cls.numel());
    write_matrix_csv(dir / ("relation_block" + std::to_string(l) + ".csv"), rel.data(), 1,
                     rel.numel());
  }
  PatchRelationMap map = build_patch_relation_map(attention, grid_h, grid_w);
  write_matrix_csv(dir / "relation_map.csv", map.map.data(), grid_h, grid_w);
}

}  // namespace lctr::rpam
