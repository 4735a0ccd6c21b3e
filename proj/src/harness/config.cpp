#include "lctr/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace lctr {

namespace {

std::string_view trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto* first = value.data();
  const auto* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) {
    throw ConfigError("config: bad value '" + std::string(value) + "' for key '" +
                      std::string(key) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ConfigError("config: bad boolean '" + std::string(value) + "' for key '" +
                    std::string(key) + "'");
}

// Shortest text that parses back to the same double.
std::string shortest(double v) {
  char buf[32];
  return std::string(buf, std::to_chars(buf, buf + sizeof(buf), v).ptr);
}

}  // namespace

void RunConfig::finalize() {
  backbone.validate();
  cdm.num_classes = backbone.num_classes;
  cdm.embed_dim = backbone.embed_dim;
  cdm.validate();
  if (!(optimizer.lr > 0.0) || !(optimizer.eps > 0.0) || optimizer.weight_decay < 0.0 ||
      !(optimizer.beta1 > 0.0 && optimizer.beta1 < 1.0) ||
      !(optimizer.beta2 > 0.0 && optimizer.beta2 < 1.0)) {
    throw ConfigError("config: invalid optimizer settings");
  }
  if (epochs == 0 || batch_size == 0 || n_train == 0 || n_test == 0) {
    throw ConfigError("config: epochs, batch_size, n_train and n_test must be positive");
  }
  if (!(threshold_ratio > 0.0 && threshold_ratio < 1.0)) {
    throw ConfigError("config: threshold_ratio must lie in (0, 1)");
  }
}

void RunConfig::set(std::string_view key, std::string_view value) {
  using Size = std::size_t;
  if (key == "image_size") backbone.image_size = parse_number<Size>(key, value);
  else if (key == "patch_size") backbone.patch_size = parse_number<Size>(key, value);
  else if (key == "embed_dim") backbone.embed_dim = parse_number<Size>(key, value);
  else if (key == "num_heads") backbone.num_heads = parse_number<Size>(key, value);
  else if (key == "num_blocks") backbone.num_blocks = parse_number<Size>(key, value);
  else if (key == "mlp_ratio") backbone.mlp_ratio = parse_number<double>(key, value);
  else if (key == "num_classes") backbone.num_classes = parse_number<Size>(key, value);
  else if (key == "num_kernel_groups") cdm.num_kernel_groups = parse_number<Size>(key, value);
  else if (key == "kernel_size") cdm.kernel_h = cdm.kernel_w = parse_number<Size>(key, value);
  else if (key == "lr") optimizer.lr = parse_number<double>(key, value);
  else if (key == "beta1") optimizer.beta1 = parse_number<double>(key, value);
  else if (key == "beta2") optimizer.beta2 = parse_number<double>(key, value);
  else if (key == "eps") optimizer.eps = parse_number<double>(key, value);
  else if (key == "weight_decay") optimizer.weight_decay = parse_number<double>(key, value);
  else if (key == "epochs") epochs = parse_number<Size>(key, value);
  else if (key == "batch_size") batch_size = parse_number<Size>(key, value);
  else if (key == "n_train") n_train = parse_number<Size>(key, value);
  else if (key == "n_test") n_test = parse_number<Size>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "threshold_ratio") threshold_ratio = parse_number<double>(key, value);
  else if (key == "rpam_enabled") rpam_enabled = parse_bool(key, value);
  else if (key == "cdm_enabled") cdm_enabled = parse_bool(key, value);
  else throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << "image_size = " << backbone.image_size << '\n'
      << "patch_size = " << backbone.patch_size << '\n'
      << "embed_dim = " << backbone.embed_dim << '\n'
      << "num_heads = " << backbone.num_heads << '\n'
      << "num_blocks = " << backbone.num_blocks << '\n'
      << "mlp_ratio = " << shortest(backbone.mlp_ratio) << '\n'
      << "num_classes = " << backbone.num_classes << '\n'
      << "num_kernel_groups = " << cdm.num_kernel_groups << '\n'
      << "kernel_size = " << cdm.kernel_h << '\n'
      << "lr = " << shortest(optimizer.lr) << '\n'
      << "beta1 = " << shortest(optimizer.beta1) << '\n'
      << "beta2 = " << shortest(optimizer.beta2) << '\n'
      << "eps = " << shortest(optimizer.eps) << '\n'
      << "weight_decay = " << shortest(optimizer.weight_decay) << '\n'
      << "epochs = " << epochs << '\n'
      << "batch_size = " << batch_size << '\n'
      << "n_train = " << n_train << '\n'
      << "n_test = " << n_test << '\n'
      << "seed = " << seed << '\n'
      << "threshold_ratio = " << shortest(threshold_ratio) << '\n'
      << "rpam_enabled = " << (rpam_enabled ? "true" : "false") << '\n'
      << "cdm_enabled = " << (cdm_enabled ? "true" : "false") << '\n';
  return out.str();
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig config;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto newline = text.find('\n');
    std::string_view line = text.substr(0, newline);
    text = newline == std::string_view::npos ? std::string_view{} : text.substr(newline + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  config.finalize();
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

}  // namespace lctr
