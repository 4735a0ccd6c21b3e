#pragma once

#include <cstddef>
#include <filesystem>

#include "lctr/tensor.hpp"
#include "lctr/vit.hpp"

// Relational patch-attention: turns the recorded attention of every block
// into a spatial map of class-guided cross-patch relations. Pure functions
// on attention values; no parameters and no gradient tracking.
namespace lctr::rpam {

struct PatchRelationMap {
  Tensor map;  // [grid_h x grid_w], entries >= 0
  std::size_t source_blocks = 0;
};

/// Row 0 of a head-averaged attention matrix: class token -> all N+1 tokens.
Tensor class_token_vector(const Tensor& averaged);

/// Columns 1..N: every token's attention to the patch tokens, [(N+1) x N].
Tensor patch_attention_map(const Tensor& averaged);

/// Per-block relation vector [N]: each patch-attention row weighted by the
/// class-token attention of the same token, then averaged over rows.
Tensor block_relation_vector(const Tensor& averaged);

/// Block mean of the relation vectors, reshaped row-major to the grid.
PatchRelationMap build_patch_relation_map(const AttentionRecord& attention,
                                          std::size_t grid_h, std::size_t grid_w);

/// Writes class_token_block<l>.csv and relation_block<l>.csv for every
/// block plus relation_map.csv into dir.
void dump_debug_csv(const AttentionRecord& attention, std::size_t grid_h,
                    std::size_t grid_w, const std::filesystem::path& dir);

}  // namespace lctr::rpam
