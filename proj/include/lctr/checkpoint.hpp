#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lctr/tensor.hpp"

namespace lctr {

inline constexpr const char* kCheckpointVersion = "lctr-ckpt-v1";

/// Malformed checkpoint, or one whose manifest does not match the model.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;  // bytes from the start of the data section
  std::vector<double> values;
};

// Layout: a text manifest followed by one binary blob.
//
//   lctr-ckpt-v1
//   params <count>
//   <name> <d0>x<d1>... <byte offset>     (one line per parameter)
//   data <byte count>
//   <little-endian IEEE-754 doubles, concatenated in manifest order>
void save_checkpoint(const std::filesystem::path& path, const ParameterList& params);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

/// Copies stored values into params. Every parameter must be present with
/// an identical shape; otherwise throws CheckpointError listing each
/// mismatch.
void load_checkpoint(const std::filesystem::path& path, ParameterList& params);

/// Order-dependent FNV-1a hash over names and raw value bytes.
std::uint64_t parameter_checksum(const ParameterList& params);

}  // namespace lctr
