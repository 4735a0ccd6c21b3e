#include "lctr/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace lctr::data {

namespace {

using Rgb = std::array<double, 3>;

// Inside tests on coordinates normalized to [-1, 1] over the shape's box.
bool inside(std::size_t label, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  const double r2 = u * u + v * v;
  switch (label) {
    case 0: return r2 <= 1.0;                                      // disk
    case 1: return au <= 1.0 && av <= 0.6;                         // rectangle
    case 2: return v >= -1.0 && v <= 1.0 && au <= (v + 1.0) / 2.0; // triangle
    case 3: return r2 <= 1.0 && r2 >= 0.3;                         // ring
    case 4: return (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0);  // cross
    case 5: return au + av <= 1.0;                                 // diamond
    case 6: return u * u + (v / 0.55) * (v / 0.55) <= 1.0;         // ellipse
    case 7: return (u <= -0.35 && au <= 1.0 && av <= 1.0) ||
                   (v >= 0.35 && av <= 1.0 && au <= 1.0);          // L-shape
    case 8: return std::abs(au - av) <= 0.35 && au <= 1.0 && av <= 1.0;  // X
    case 9: return std::max(au, av) <= 1.0 && std::max(au, av) >= 0.55;  // frame
    default: return false;
  }
}

// Marker colours: saturated and pairwise distinct.
constexpr std::array<Rgb, kMaxShapeClasses> kMarkerColors{{
    {1.0, 0.1, 0.1}, {0.1, 1.0, 0.1}, {0.1, 0.2, 1.0}, {1.0, 1.0, 0.1}, {1.0, 0.1, 1.0},
    {0.1, 1.0, 1.0}, {1.0, 0.55, 0.0}, {0.55, 0.0, 1.0}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0},
}};

constexpr std::array<const char*, kMaxShapeClasses> kShapeNames{
    "disk", "rectangle", "triangle", "ring", "cross",
    "diamond", "ellipse", "l-shape", "x", "frame"};

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

const char* shape_name(std::size_t label) {
  return label < kShapeNames.size() ? kShapeNames[label] : "unknown";
}

Sample render_sample(std::size_t label, std::size_t image_size, Rng& rng) {
  if (label >= kMaxShapeClasses) throw ConfigError("render_sample: unknown class");
  const std::size_t n = image_size;
  const double size = static_cast<double>(n);

  // Background: per-channel grey level, a low-amplitude sinusoid and noise.
  Rgb base;
  const double grey = rng.uniform(0.3, 0.55);
  for (double& c : base) c = grey + rng.uniform(-0.05, 0.05);
  const double fx = rng.uniform(0.2, 0.9), fy = rng.uniform(0.2, 0.9);
  const double phase_x = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double phase_y = rng.uniform(0.0, 2.0 * std::numbers::pi);

  // Shape geometry: extent between 3/8 and 11/16 of the image side.
  const double extent = rng.uniform(0.375, 0.6875) * size;
  const double half = extent / 2.0;
  const double cx = rng.uniform(half, size - half);
  const double cy = rng.uniform(half, size - half);
  const double contrast = rng.uniform(0.12, 0.2) * (rng.uniform() < 0.5 ? -1.0 : 1.0);

  std::vector<double> pixels(3 * n * n);
  std::vector<bool> body(n * n, false);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double texture = 0.04 * std::sin(fx * px + phase_x) * std::sin(fy * py + phase_y);
      const bool in = inside(label, (px - cx) / half, (py - cy) / half);
      body[y * n + x] = in;
      for (std::size_t c = 0; c < 3; ++c) {
        double value = base[c] + texture + rng.uniform(-0.03, 0.03);
        if (in) value += contrast;
        pixels[(c * n + y) * n + x] = std::clamp(value, 0.0, 1.0);
      }
    }
  }

  std::size_t x0 = n, y0 = n, x1 = 0, y1 = 0;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      if (!body[y * n + x]) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x + 1);
      y1 = std::max(y1, y + 1);
    }
  }

  // Marker square anchored at the top-left corner of the body's box.
  const std::size_t marker = std::max<std::size_t>(3, n / 8);
  const Rgb& color = kMarkerColors[label];
  for (std::size_t y = y0; y < std::min(y0 + marker, y1); ++y) {
    for (std::size_t x = x0; x < std::min(x0 + marker, x1); ++x) {
      for (std::size_t c = 0; c < 3; ++c) pixels[(c * n + y) * n + x] = color[c];
    }
  }

  Sample s;
  s.image = Tensor::from({3, n, n}, std::move(pixels));
  s.label = label;
  s.gt_box = loc::Box{x0, y0, x1, y1};
  return s;
}

Dataset generate_dataset(std::size_t n_train, std::size_t n_test, std::size_t image_size,
                         std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 3 || num_classes > kMaxShapeClasses) {
    throw ConfigError("generate_dataset: num_classes must be in [3, 10], got " +
                      std::to_string(num_classes));
  }
  if (image_size != 32 && image_size != 64) {
    throw ConfigError("generate_dataset: image size must be 32 or 64, got " +
                      std::to_string(image_size));
  }
  auto make_split = [&](std::size_t count, std::uint64_t split) {
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng = Rng::derive(seed, (split << 32) | i);
      out.push_back(render_sample(i % num_classes, image_size, rng));
    }
    return out;
  };
  return Dataset{make_split(n_train, 1), make_split(n_test, 2)};
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("write_ppm: expected [3 x H x W], got " +
                         shape_to_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << w << ' ' << h << "\n255\n";
  auto d = image.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.put(static_cast<char>(to_byte(d[(c * h + y) * w + x])));
    }
  }
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w == 0 || h == 0 || maxval != 255) {
    throw std::runtime_error(path.string() + ": not an 8-bit P6 image");
  }
  in.get();
  std::vector<unsigned char> raw(3 * w * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw std::runtime_error(path.string() + ": truncated pixel data");
  }
  std::vector<double> values(raw.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        values[(c * h + y) * w + x] = raw[(y * w + x) * 3 + c] / 255.0;
      }
    }
  }
  return Tensor::from({3, h, w}, std::move(values));
}

void write_split(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir);
  std::ofstream labels(dir / "labels.csv", std::ios::binary);
  std::ofstream boxes(dir / "boxes.csv", std::ios::binary);
  labels << "id,class\n";
  boxes << "id,x0,y0,x1,y1\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    write_ppm(dir / ("img_" + std::to_string(i) + ".ppm"), s.image);
    labels << i << ',' << s.label << '\n';
    boxes << i << ',' << s.gt_box.x0 << ',' << s.gt_box.y0 << ',' << s.gt_box.x1 << ','
          << s.gt_box.y1 << '\n';
  }
}

std::vector<Sample> read_split(const std::filesystem::path& dir) {
  auto read_rows = [](const std::filesystem::path& path, std::size_t columns) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::vector<std::size_t>> rows;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::size_t> row;
      std::stringstream fields(line);
      std::string field;
      while (std::getline(fields, field, ',')) row.push_back(std::stoull(field));
      if (row.size() != columns) throw std::runtime_error(path.string() + ": malformed row");
      rows.push_back(std::move(row));
    }
    return rows;
  };
  const auto labels = read_rows(dir / "labels.csv", 2);
  const auto boxes = read_rows(dir / "boxes.csv", 5);
  if (labels.size() != boxes.size()) {
    throw std::runtime_error(dir.string() + ": labels.csv and boxes.csv disagree in length");
  }
  std::vector<Sample> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t id = labels[i][0];
    if (boxes[i][0] != id) throw std::runtime_error(dir.string() + ": id order mismatch");
    Sample s;
    s.image = read_ppm(dir / ("img_" + std::to_string(id) + ".ppm"));
    s.label = labels[i][1];
    s.gt_box = loc::Box{boxes[i][1], boxes[i][2], boxes[i][3], boxes[i][4]};
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace lctr::data
