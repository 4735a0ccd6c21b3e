#include "lctr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace lctr {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

Shape parse_shape(const std::string& text) {
  Shape shape;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, 'x')) {
    try {
      shape.push_back(std::stoull(part));
    } catch (const std::exception&) {
      throw CheckpointError("bad shape token '" + text + "'");
    }
  }
  if (shape.empty()) throw CheckpointError("empty shape in manifest");
  return shape;
}

std::string format_shape(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterList& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out << kCheckpointVersion << '\n' << "params " << params.size() << '\n';
  std::uint64_t offset = 0;
  for (const auto& p : params.items()) {
    out << p.name << ' ' << format_shape(p.tensor.shape()) << ' ' << offset << '\n';
    offset += p.tensor.numel() * sizeof(double);
  }
  out << "data " << offset << '\n';
  for (const auto& p : params.items()) {
    auto values = p.tensor.data();
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("write failed for " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": missing version tag " + kCheckpointVersion);
  }
  std::string keyword;
  std::size_t count = 0;
  if (!std::getline(in, line) || !(std::istringstream(line) >> keyword >> count) ||
      keyword != "params") {
    throw CheckpointError(path.string() + ": malformed parameter count line");
  }
  std::vector<CheckpointEntry> entries(count);
  for (auto& e : entries) {
    std::string shape_text;
    if (!std::getline(in, line) ||
        !(std::istringstream(line) >> e.name >> shape_text >> e.offset)) {
      throw CheckpointError(path.string() + ": malformed manifest line '" + line + "'");
    }
    e.shape = parse_shape(shape_text);
  }
  std::uint64_t total = 0;
  if (!std::getline(in, line) || !(std::istringstream(line) >> keyword >> total) ||
      keyword != "data") {
    throw CheckpointError(path.string() + ": missing data section header");
  }
  std::vector<char> blob(total);
  in.read(blob.data(), static_cast<std::streamsize>(total));
  if (static_cast<std::uint64_t>(in.gcount()) != total) {
    throw CheckpointError(path.string() + ": truncated data section");
  }
  for (auto& e : entries) {
    const std::uint64_t bytes = shape_numel(e.shape) * sizeof(double);
    if (e.offset + bytes > total) {
      throw CheckpointError(path.string() + ": entry '" + e.name + "' exceeds data section");
    }
    e.values.resize(shape_numel(e.shape));
    std::memcpy(e.values.data(), blob.data() + e.offset, bytes);
  }
  return entries;
}

void load_checkpoint(const std::filesystem::path& path, ParameterList& params) {
  std::vector<CheckpointEntry> entries = read_checkpoint(path);
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;

  std::vector<std::string> problems;
  for (const auto& p : params.items()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      problems.push_back(p.name + ": missing (model " + shape_to_string(p.tensor.shape()) + ")");
    } else if (it->second->shape != p.tensor.shape()) {
      problems.push_back(p.name + ": checkpoint " + shape_to_string(it->second->shape) +
                         " vs model " + shape_to_string(p.tensor.shape()));
    }
  }
  for (const auto& e : entries) {
    if (params.find(e.name) == nullptr) {
      problems.push_back(e.name + ": unexpected (checkpoint " + shape_to_string(e.shape) + ")");
    }
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint " + path.string() + " does not match the model:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw CheckpointError(msg);
  }
  for (auto& p : params.items()) {
    const auto& values = by_name.at(p.name)->values;
    auto dst = p.tensor.mutable_data();
    std::copy(values.begin(), values.end(), dst.begin());
  }
}

std::uint64_t parameter_checksum(const ParameterList& params) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  auto mix = [&hash](const void* bytes, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= b[i];
      hash *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : params.items()) {
    mix(p.name.data(), p.name.size());
    auto values = p.tensor.data();
    mix(values.data(), values.size() * sizeof(double));
  }
  return hash;
}

}  // namespace lctr
