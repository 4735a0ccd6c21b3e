#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lctr/localization.hpp"
#include "lctr/random.hpp"
#include "lctr/tensor.hpp"

namespace lctr::data {

struct Sample {
  Tensor image;  // [3 x H x W], values in [0, 1]
  std::size_t label = 0;
  loc::Box gt_box;  // tight box of the rendered foreground; never used in training
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

inline constexpr std::size_t kMaxShapeClasses = 10;
const char* shape_name(std::size_t label);

/// Renders one sample of the given class: a low-contrast shape body with a
/// small high-contrast, class-coloured marker in its top-left corner, on a
/// textured background.
Sample render_sample(std::size_t label, std::size_t image_size, Rng& rng);

/// Labels are assigned round-robin; sample i of each split draws from its
/// own derived stream, so output depends only on the arguments.
/// ConfigError unless 3 <= num_classes <= 10 and image_size is 32 or 64.
Dataset generate_dataset(std::size_t n_train, std::size_t n_test, std::size_t image_size,
                         std::size_t num_classes, std::uint64_t seed);

/// img_<id>.ppm (P6) plus labels.csv (id,class) and boxes.csv (id,x0,y0,x1,y1).
void write_split(const std::filesystem::path& dir, const std::vector<Sample>& samples);
std::vector<Sample> read_split(const std::filesystem::path& dir);

void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

}  // namespace lctr::data
