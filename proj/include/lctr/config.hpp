#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "lctr/cdm.hpp"
#include "lctr/vit.hpp"

namespace lctr {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

/// Everything a run needs. Serialized as flat `key = value` lines; `#`
/// starts a comment.
struct RunConfig {
  BackboneConfig backbone;
  cdm::CdmConfig cdm;
  OptimizerConfig optimizer;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::size_t n_train = 2000;
  std::size_t n_test = 500;
  std::uint64_t seed = 0;
  double threshold_ratio = 0.35;
  bool rpam_enabled = true;
  bool cdm_enabled = true;

  /// Copies shared extents (classes, width) from the backbone into the
  /// CDM config, then checks every field. Throws ConfigError.
  void finalize();

  /// Applies one key. Throws ConfigError on unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  std::string to_text() const;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace lctr
