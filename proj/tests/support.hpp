#pragma once

// Shared helpers for the unit and acceptance tests: random tensors and a
// central finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lctr/localization.hpp"
#include "lctr/ops.hpp"
#include "lctr/random.hpp"
#include "lctr/tensor.hpp"

namespace lctr::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Relative error with a floor on the denominator so that gradients which
// are zero up to rounding compare in absolute terms.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t coords = 0;
};

// f maps the inputs to a scalar. Every entry of every input is perturbed
// by +-step unless `limit` caps the number of coordinates per input, in
// which case coordinates are drawn with the given rng.
inline GradCheck check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 std::vector<Tensor> inputs, double step = 1e-5,
                                 std::size_t limit = 0, Rng* rng = nullptr) {
  for (Tensor& t : inputs) {
    t.zero_grad();
    t.set_requires_grad(true);
  }
  Tensor out = f(inputs);
  out.backward();

  GradCheck result;
  NoGradGuard no_grad;
  for (Tensor& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::vector<std::size_t> coords;
    if (limit == 0 || limit >= t.numel()) {
      for (std::size_t i = 0; i < t.numel(); ++i) coords.push_back(i);
    } else {
      for (std::size_t k = 0; k < limit; ++k) coords.push_back(rng->below(t.numel()));
    }
    auto data = t.mutable_data();
    for (std::size_t i : coords) {
      const double saved = data[i];
      data[i] = saved + step;
      const double up = f(inputs).item();
      data[i] = saved - step;
      const double down = f(inputs).item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[i], numeric));
      ++result.coords;
    }
  }
  return result;
}

// Reduces any output to a scalar through a fixed random weighting so that
// every output entry contributes a distinct gradient.
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng)));
}

// Flood-fill oracle: explicit stack, seeds visited in row-major order, the
// first component of maximal area wins.
inline loc::Box flood_fill_box(const Tensor& heatmap, double ratio) {
  const std::size_t h = heatmap.dim(0), w = heatmap.dim(1);
  auto d = heatmap.data();
  double lo = d[0], hi = d[0];
  for (double v : d) lo = std::min(lo, v), hi = std::max(hi, v);
  std::vector<bool> on(h * w, false);
  for (std::size_t i = 0; i < h * w; ++i) {
    const double n = hi > lo ? (d[i] - lo) / (hi - lo) : 0.0;
    on[i] = n > ratio * (hi > lo ? 1.0 : 0.0);
  }
  std::vector<bool> seen(h * w, false);
  std::size_t best_area = 0;
  loc::Box best{0, 0, w, h};
  for (std::size_t seed = 0; seed < h * w; ++seed) {
    if (!on[seed] || seen[seed]) continue;
    std::vector<std::size_t> stack{seed};
    seen[seed] = true;
    std::size_t area = 0;
    loc::Box b{w, h, 0, 0};
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++area;
      const std::size_t y = p / w, x = p % w;
      b.x0 = std::min(b.x0, x), b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x + 1), b.y1 = std::max(b.y1, y + 1);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) continue;
          const std::size_t q = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
          if (on[q] && !seen[q]) {
            seen[q] = true;
            stack.push_back(q);
          }
        }
    }
    if (area > best_area) best_area = area, best = b;
  }
  return best;
}

}  // namespace lctr::testing
