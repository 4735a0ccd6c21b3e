#include "lctr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace lctr {

namespace {

using detail::TensorImpl;
using BackwardFn = std::function<void(TensorImpl&)>;

Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs,
                   BackwardFn backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  if (!grad_mode_enabled()) return out;
  bool any = false;
  for (const Tensor* t : inputs) any = any || (t->defined() && t->requires_grad());
  if (!any) return out;
  TensorImpl& impl = *out.impl();
  for (const Tensor* t : inputs) impl.parents.push_back(t->impl());
  impl.requires_grad = true;
  impl.backward_fn = std::move(backward);
  return out;
}

Tensor make_result(Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& inputs, BackwardFn backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  if (!grad_mode_enabled()) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  TensorImpl& impl = *out.impl();
  for (const Tensor& t : inputs) impl.parents.push_back(t.impl());
  impl.requires_grad = true;
  impl.backward_fn = std::move(backward);
  return out;
}

// Returns the grad buffer of parent i, or nullptr if it takes no gradient.
double* parent_grad(TensorImpl& self, std::size_t i) {
  TensorImpl* p = self.parents[i].get();
  return (p && p->requires_grad) ? p->grad_buffer() : nullptr;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined operand");
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require_defined(t, op);
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " +
                         shape_to_string(t.shape()));
  }
}

// Number of times b repeats inside a when b's shape is a suffix of a's.
std::size_t broadcast_outer(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = sb.size() <= sa.size() &&
            std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  if (!ok) {
    throw DimensionError(std::string(op) + ": cannot broadcast " +
                         shape_to_string(sb) + " onto " + shape_to_string(sa));
  }
  return a.numel() / b.numel();
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void check_axis(const Tensor& x, std::size_t axis, const char* op) {
  require_defined(x, op);
  if (axis >= x.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " invalid for shape " + shape_to_string(x.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  const std::size_t outer = broadcast_outer(a, b, "add");
  const std::size_t inner = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(ad.begin(), ad.end());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += bd[i];
  }
  return make_result(a.shape(), std::move(out), {&a, &b},
                     [outer, inner](TensorImpl& self) {
                       const double* g = self.grad.data();
                       if (double* ga = parent_grad(self, 0)) {
                         for (std::size_t i = 0; i < outer * inner; ++i) ga[i] += g[i];
                       }
                       if (double* gb = parent_grad(self, 1)) {
                         for (std::size_t o = 0; o < outer; ++o) {
                           for (std::size_t i = 0; i < inner; ++i) gb[i] += g[o * inner + i];
                         }
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  const std::size_t outer = broadcast_outer(a, b, "sub");
  const std::size_t inner = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(ad.begin(), ad.end());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] -= bd[i];
  }
  return make_result(a.shape(), std::move(out), {&a, &b},
                     [outer, inner](TensorImpl& self) {
                       const double* g = self.grad.data();
                       if (double* ga = parent_grad(self, 0)) {
                         for (std::size_t i = 0; i < outer * inner; ++i) ga[i] += g[i];
                       }
                       if (double* gb = parent_grad(self, 1)) {
                         for (std::size_t o = 0; o < outer; ++o) {
                           for (std::size_t i = 0; i < inner; ++i) gb[i] -= g[o * inner + i];
                         }
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  const std::size_t outer = broadcast_outer(a, b, "mul");
  const std::size_t inner = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      out[o * inner + i] = ad[o * inner + i] * bd[i];
    }
  }
  return make_result(a.shape(), std::move(out), {&a, &b},
                     [outer, inner](TensorImpl& self) {
                       const double* g = self.grad.data();
                       const auto& av = self.parents[0]->data;
                       const auto& bv = self.parents[1]->data;
                       if (double* ga = parent_grad(self, 0)) {
                         for (std::size_t o = 0; o < outer; ++o) {
                           for (std::size_t i = 0; i < inner; ++i) {
                             ga[o * inner + i] += g[o * inner + i] * bv[i];
                           }
                         }
                       }
                       if (double* gb = parent_grad(self, 1)) {
                         for (std::size_t o = 0; o < outer; ++o) {
                           for (std::size_t i = 0; i < inner; ++i) {
                             gb[i] += g[o * inner + i] * av[o * inner + i];
                           }
                         }
                       }
                     });
}

Tensor affine(const Tensor& x, double scale, double shift) {
  require_defined(x, "affine");
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = scale * xd[i] + shift;
  return make_result(x.shape(), std::move(out), {&x}, [scale](TensorImpl& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += scale * self.grad[i];
    }
  });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  require_defined(x, "scale_by");
  require_defined(s, "scale_by");
  if (s.numel() != 1) {
    throw DimensionError("scale_by: scale must have one entry, got " +
                         shape_to_string(s.shape()));
  }
  const double factor = s.data()[0];
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = factor * xd[i];
  return make_result(x.shape(), std::move(out), {&x, &s}, [](TensorImpl& self) {
    const double* g = self.grad.data();
    const auto& xv = self.parents[0]->data;
    const double factor = self.parents[1]->data[0];
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += factor * g[i];
    }
    if (double* gs = parent_grad(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i) acc += g[i] * xv[i];
      gs[0] += acc;
    }
  });
}

namespace {

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// ga[m x k] += g[m x n] * b[k x n]^T, via an explicit transpose of b so the
// inner loop runs over contiguous rows.
void gemm_nt(const double* g, const double* b, double* ga, std::size_t m,
             std::size_t k, std::size_t n) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  }
  gemm_nn(g, bt.data(), ga, m, n, k);
}

// gb[k x n] += a[m x k]^T * g[m x n]
void gemm_tn(const double* a, const double* g, double* gb, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* gbrow = gb + p * n;
      for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents disagree for " +
                         shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](TensorImpl& self) {
    const double* g = self.grad.data();
    if (double* ga = parent_grad(self, 0)) {
      gemm_nt(g, self.parents[1]->data.data(), ga, m, k, n);
    }
    if (double* gb = parent_grad(self, 1)) {
      gemm_tn(self.parents[0]->data.data(), g, gb, m, k, n);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  require_rank(bias, 1, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = weight.dim(1);
  if (weight.dim(0) != k || bias.dim(0) != n) {
    throw DimensionError("linear: incompatible shapes " +
                         shape_to_string(x.shape()) + ", " +
                         shape_to_string(weight.shape()) + ", " +
                         shape_to_string(bias.shape()));
  }
  std::vector<double> out(m * n);
  auto bd = bias.data();
  for (std::size_t i = 0; i < m; ++i) std::copy(bd.begin(), bd.end(), out.begin() + i * n);
  gemm_nn(x.data().data(), weight.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {&x, &weight, &bias},
                     [m, k, n](TensorImpl& self) {
                       const double* g = self.grad.data();
                       if (double* gx = parent_grad(self, 0)) {
                         gemm_nt(g, self.parents[1]->data.data(), gx, m, k, n);
                       }
                       if (double* gw = parent_grad(self, 1)) {
                         gemm_tn(self.parents[0]->data.data(), g, gw, m, k, n);
                       }
                       if (double* gb = parent_grad(self, 2)) {
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                         }
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto xd = x.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xd[i * n + j];
  }
  return make_result({n, m}, std::move(out), {&x}, [m, n](TensorImpl& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += self.grad[j * m + i];
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) +
                         " as " + shape_to_string(shape));
  }
  auto xd = x.data();
  return make_result(std::move(shape), {xd.begin(), xd.end()}, {&x},
                     [](TensorImpl& self) {
                       if (double* gx = parent_grad(self, 0)) {
                         for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
                       }
                     });
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start,
              std::size_t length) {
  check_axis(x, axis, "narrow");
  if (length == 0 || start + length > x.dim(axis)) {
    throw DimensionError("narrow: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") exceeds axis " +
                         std::to_string(axis) + " of " +
                         shape_to_string(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = length;
  auto xd = x.data();
  std::vector<double> out(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = xd.data() + (o * s.extent + start) * s.inner;
    std::copy(src, src + length * s.inner, out.begin() + o * length * s.inner);
  }
  return make_result(std::move(shape), std::move(out), {&x},
                     [s, start, length](TensorImpl& self) {
                       if (double* gx = parent_grad(self, 0)) {
                         const std::size_t block = length * s.inner;
                         for (std::size_t o = 0; o < s.outer; ++o) {
                           double* dst = gx + (o * s.extent + start) * s.inner;
                           const double* g = self.grad.data() + o * block;
                           for (std::size_t i = 0; i < block; ++i) dst[i] += g[i];
                         }
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat: no operands");
  check_axis(parts[0], axis, "concat");
  Shape shape = parts[0].shape();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    require_defined(p, "concat");
    Shape probe = p.shape();
    if (probe.size() != shape.size()) {
      throw DimensionError("concat: rank mismatch " + shape_to_string(shape) +
                           " vs " + shape_to_string(probe));
    }
    probe[axis] = shape[axis];
    if (probe != shape) {
      throw DimensionError("concat: incompatible " + shape_to_string(shape) +
                           " and " + shape_to_string(p.shape()));
    }
    total += p.dim(axis);
  }
  shape[axis] = total;
  const AxisSplit s = split_at(shape, axis);
  std::vector<std::size_t> extents;
  for (const Tensor& p : parts) extents.push_back(p.dim(axis));

  std::vector<double> out(shape_numel(shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pd = parts[k].data();
    const std::size_t block = extents[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy(pd.begin() + o * block, pd.begin() + (o + 1) * block,
                out.begin() + (o * total + offset) * s.inner);
    }
    offset += extents[k];
  }
  return make_result(std::move(shape), std::move(out), parts,
                     [s, total, extents](TensorImpl& self) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < extents.size(); ++k) {
                         const std::size_t block = extents[k] * s.inner;
                         if (double* gp = parent_grad(self, k)) {
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             const double* g =
                                 self.grad.data() + (o * total + offset) * s.inner;
                             for (std::size_t i = 0; i < block; ++i) gp[o * block + i] += g[i];
                           }
                         }
                         offset += extents[k];
                       }
                     });
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  require_rank(image, 3, "patchify");
  const std::size_t channels = image.dim(0), height = image.dim(1), width = image.dim(2);
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw DimensionError("patchify: patch size " + std::to_string(patch) +
                         " does not divide " + shape_to_string(image.shape()));
  }
  const std::size_t rows = height / patch, cols = width / patch;
  const std::size_t row_len = channels * patch * patch;
  // index[k] is the source offset of output entry k.
  std::vector<std::size_t> index(rows * cols * row_len);
  std::size_t k = 0;
  for (std::size_t gy = 0; gy < rows; ++gy) {
    for (std::size_t gx = 0; gx < cols; ++gx) {
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t py = 0; py < patch; ++py) {
          for (std::size_t px = 0; px < patch; ++px) {
            index[k++] = (c * height + gy * patch + py) * width + gx * patch + px;
          }
        }
      }
    }
  }
  auto xd = image.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = xd[index[i]];
  return make_result({rows * cols, row_len}, std::move(out), {&image},
                     [index = std::move(index)](TensorImpl& self) {
                       if (double* gx = parent_grad(self, 0)) {
                         for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += self.grad[i];
                       }
                     });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("stack: no operands");
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  for (const Tensor& p : parts) {
    require_defined(p, "stack");
    Shape shape = p.shape();
    shape.insert(shape.begin(), 1);
    lifted.push_back(reshape(p, std::move(shape)));
  }
  return concat(lifted, 0);
}

Tensor mean_leading(const Tensor& x) {
  require_defined(x, "mean_leading");
  if (x.rank() < 2) {
    throw DimensionError("mean_leading: need rank >= 2, got " +
                         shape_to_string(x.shape()));
  }
  const std::size_t count = x.dim(0);
  const std::size_t inner = x.numel() / count;
  Shape shape(x.shape().begin() + 1, x.shape().end());
  auto xd = x.data();
  std::vector<double> out(inner, 0.0);
  for (std::size_t k = 0; k < count; ++k) {
    for (std::size_t i = 0; i < inner; ++i) out[i] += xd[k * inner + i];
  }
  const double denom = static_cast<double>(count);
  for (double& v : out) v /= denom;
  return make_result(std::move(shape), std::move(out), {&x},
                     [count, inner](TensorImpl& self) {
                       if (double* gx = parent_grad(self, 0)) {
                         const double denom = static_cast<double>(count);
                         for (std::size_t k = 0; k < count; ++k) {
                           for (std::size_t i = 0; i < inner; ++i) {
                             gx[k * inner + i] += self.grad[i] / denom;
                           }
                         }
                       }
                     });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_result({1}, {acc}, {&x}, [](TensorImpl& self) {
    if (double* gx = parent_grad(self, 0)) {
      const double g = self.grad[0];
      const std::size_t n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    }
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  return affine(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) peak = std::max(peak, xd[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(xd[base + k * s.inner] - peak);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= total;
    }
  }
  return make_result(x.shape(), std::move(out), {&x}, [s](TensorImpl& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) {
          dot += g[base + k * s.inner] * y[base + k * s.inner];
        }
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t idx = base + k * s.inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu");
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    out[i] = 0.5 * xd[i] * (1.0 + std::erf(xd[i] * std::numbers::sqrt2 / 2.0));
  }
  return make_result(x.shape(), std::move(out), {&x}, [](TensorImpl& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = self.parents[0]->data;
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  require_defined(x, "sigmoid");
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const double v = xd[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return make_result(x.shape(), std::move(out), {&x}, [](TensorImpl& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.data.size(); ++i) {
        const double y = self.data[i];
        gx[i] += self.grad[i] * y * (1.0 - y);
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (!(eps > 0.0)) {
    throw ConfigError("layer_norm: eps must be positive, got " + std::to_string(eps));
  }
  require_defined(x, "layer_norm");
  require_rank(gain, 1, "layer_norm");
  require_rank(bias, 1, "layer_norm");
  const std::size_t width = x.shape().back();
  if (gain.dim(0) != width || bias.dim(0) != width) {
    throw DimensionError("layer_norm: gain/bias " + shape_to_string(gain.shape()) +
                         "/" + shape_to_string(bias.shape()) +
                         " do not match last axis of " + shape_to_string(x.shape()));
  }
  const std::size_t rows = x.numel() / width;
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  std::vector<double> out(xd.size());
  std::vector<double> normalized(xd.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * width;
    double m = 0.0;
    for (std::size_t j = 0; j < width; ++j) m += row[j];
    m /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - m) * (row[j] - m);
    var /= static_cast<double>(width);
    const double rstd = 1.0 / std::sqrt(var + eps);
    inv_std[r] = rstd;
    for (std::size_t j = 0; j < width; ++j) {
      const double xhat = (row[j] - m) * rstd;
      normalized[r * width + j] = xhat;
      out[r * width + j] = xhat * gd[j] + bd[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [rows, width, normalized = std::move(normalized),
       inv_std = std::move(inv_std)](TensorImpl& self) {
        const double* g = self.grad.data();
        const auto& gv = self.parents[1]->data;
        if (double* gg = parent_grad(self, 1)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < width; ++j) {
              gg[j] += g[r * width + j] * normalized[r * width + j];
            }
          }
        }
        if (double* gb = parent_grad(self, 2)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < width; ++j) gb[j] += g[r * width + j];
          }
        }
        if (double* gx = parent_grad(self, 0)) {
          const double inv_w = 1.0 / static_cast<double>(width);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t j = 0; j < width; ++j) {
              const double d = g[r * width + j] * gv[j];
              mean_d += d;
              mean_dx += d * normalized[r * width + j];
            }
            mean_d *= inv_w;
            mean_dx *= inv_w;
            for (std::size_t j = 0; j < width; ++j) {
              const double d = g[r * width + j] * gv[j];
              gx[r * width + j] +=
                  inv_std[r] * (d - mean_d - normalized[r * width + j] * mean_dx);
            }
          }
        }
      });
}

namespace {

struct ConvGeometry {
  std::size_t in_channels, out_channels, height, width, kh, kw, pad;
};

// Visits every (input offset, output offset) pair of one kernel tap along a
// spatial row pair; the callback receives contiguous runs.
template <typename Fn>
void for_each_tap(const ConvGeometry& g, std::size_t ki, std::size_t kj, Fn&& fn) {
  for (std::size_t y = 0; y < g.height; ++y) {
    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ki) -
                              static_cast<std::ptrdiff_t>(g.pad);
    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.height)) continue;
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kj) -
                                 static_cast<std::ptrdiff_t>(g.pad);
    const std::size_t x_begin = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
    const std::size_t x_end =
        shift > 0 ? g.width - static_cast<std::size_t>(shift) : g.width;
    if (x_begin >= x_end) continue;
    const std::ptrdiff_t src = sy * static_cast<std::ptrdiff_t>(g.width) +
                               static_cast<std::ptrdiff_t>(x_begin) + shift;
    fn(static_cast<std::size_t>(src), y * g.width + x_begin, x_end - x_begin);
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              std::size_t padding) {
  require_rank(x, 3, "conv2d");
  require_rank(kernel, 4, "conv2d");
  if (kernel.dim(0) != x.dim(0)) {
    throw DimensionError("conv2d: kernel " + shape_to_string(kernel.shape()) +
                         " expects " + std::to_string(kernel.dim(0)) +
                         " input channels, input is " + shape_to_string(x.shape()));
  }
  ConvGeometry g{x.dim(0), kernel.dim(1), x.dim(1), x.dim(2),
                 kernel.dim(2), kernel.dim(3), padding};
  if (2 * padding + 1 != g.kh || 2 * padding + 1 != g.kw) {
    throw DimensionError("conv2d: padding " + std::to_string(padding) +
                         " does not preserve extent for kernel " +
                         shape_to_string(kernel.shape()));
  }
  if (bias.defined()) {
    require_rank(bias, 1, "conv2d");
    if (bias.dim(0) != g.out_channels) {
      throw DimensionError("conv2d: bias " + shape_to_string(bias.shape()) +
                           " does not match " + std::to_string(g.out_channels) +
                           " output channels");
    }
  }
  const std::size_t plane = g.height * g.width;
  std::vector<double> out(g.out_channels * plane, 0.0);
  if (bias.defined()) {
    auto bd = bias.data();
    for (std::size_t c = 0; c < g.out_channels; ++c) {
      std::fill(out.begin() + c * plane, out.begin() + (c + 1) * plane, bd[c]);
    }
  }
  auto xd = x.data();
  auto kd = kernel.data();
  for (std::size_t d = 0; d < g.in_channels; ++d) {
    const double* in = xd.data() + d * plane;
    for (std::size_t c = 0; c < g.out_channels; ++c) {
      double* dst = out.data() + c * plane;
      const double* taps = kd.data() + (d * g.out_channels + c) * g.kh * g.kw;
      for (std::size_t ki = 0; ki < g.kh; ++ki) {
        for (std::size_t kj = 0; kj < g.kw; ++kj) {
          const double w = taps[ki * g.kw + kj];
          for_each_tap(g, ki, kj, [&](std::size_t src, std::size_t dst_off, std::size_t n) {
            for (std::size_t t = 0; t < n; ++t) dst[dst_off + t] += w * in[src + t];
          });
        }
      }
    }
  }
  std::vector<Tensor> inputs{x, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return make_result({g.out_channels, g.height, g.width}, std::move(out), inputs,
                     [g, plane](TensorImpl& self) {
                       const double* grad = self.grad.data();
                       const double* in_all = self.parents[0]->data.data();
                       const double* k_all = self.parents[1]->data.data();
                       double* gx = parent_grad(self, 0);
                       double* gk = parent_grad(self, 1);
                       for (std::size_t d = 0; d < g.in_channels; ++d) {
                         const double* in = in_all + d * plane;
                         for (std::size_t c = 0; c < g.out_channels; ++c) {
                           const double* go = grad + c * plane;
                           const std::size_t tap0 = (d * g.out_channels + c) * g.kh * g.kw;
                           for (std::size_t ki = 0; ki < g.kh; ++ki) {
                             for (std::size_t kj = 0; kj < g.kw; ++kj) {
                               const double w = k_all[tap0 + ki * g.kw + kj];
                               double acc = 0.0;
                               for_each_tap(g, ki, kj,
                                            [&](std::size_t src, std::size_t dst, std::size_t n) {
                                              for (std::size_t t = 0; t < n; ++t) {
                                                acc += go[dst + t] * in[src + t];
                                              }
                                              if (gx) {
                                                double* gxi = gx + d * plane;
                                                for (std::size_t t = 0; t < n; ++t) {
                                                  gxi[src + t] += w * go[dst + t];
                                                }
                                              }
                                            });
                               if (gk) gk[tap0 + ki * g.kw + kj] += acc;
                             }
                           }
                         }
                       }
                       if (self.parents.size() > 2) {
                         if (double* gb = parent_grad(self, 2)) {
                           for (std::size_t c = 0; c < g.out_channels; ++c) {
                             double acc = 0.0;
                             for (std::size_t i = 0; i < plane; ++i) acc += grad[c * plane + i];
                             gb[c] += acc;
                           }
                         }
                       }
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t padding) {
  return conv2d(x, kernel, Tensor{}, padding);
}

Tensor global_avg_pool(const Tensor& x) {
  require_defined(x, "global_avg_pool");
  if (x.rank() < 2) {
    throw DimensionError("global_avg_pool: need [C x ...], got " +
                         shape_to_string(x.shape()));
  }
  const std::size_t channels = x.dim(0);
  const std::size_t plane = x.numel() / channels;
  auto xd = x.data();
  std::vector<double> out(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += xd[c * plane + i];
    out[c] = acc / static_cast<double>(plane);
  }
  return make_result({channels}, std::move(out), {&x}, [channels, plane](TensorImpl& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t c = 0; c < channels; ++c) {
        const double g = self.grad[c] / static_cast<double>(plane);
        for (std::size_t i = 0; i < plane; ++i) gx[c * plane + i] += g;
      }
    }
  });
}

Tensor global_max_pool(const Tensor& x) {
  require_defined(x, "global_max_pool");
  if (x.rank() < 2) {
    throw DimensionError("global_max_pool: need [C x ...], got " +
                         shape_to_string(x.shape()));
  }
  const std::size_t channels = x.dim(0);
  const std::size_t plane = x.numel() / channels;
  auto xd = x.data();
  std::vector<double> out(channels);
  std::vector<std::size_t> argmax(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < plane; ++i) {
      if (xd[c * plane + i] > xd[c * plane + best]) best = i;
    }
    argmax[c] = c * plane + best;
    out[c] = xd[argmax[c]];
  }
  return make_result({channels}, std::move(out), {&x},
                     [argmax = std::move(argmax)](TensorImpl& self) {
                       if (double* gx = parent_grad(self, 0)) {
                         for (std::size_t c = 0; c < argmax.size(); ++c) {
                           gx[argmax[c]] += self.grad[c];
                         }
                       }
                     });
}

Tensor min_max_normalize(const Tensor& x) {
  require_defined(x, "min_max_normalize");
  auto xd = x.data();
  std::size_t lo = 0, hi = 0;
  for (std::size_t i = 1; i < xd.size(); ++i) {
    if (xd[i] < xd[lo]) lo = i;
    if (xd[i] > xd[hi]) hi = i;
  }
  const double range = xd[hi] - xd[lo];
  std::vector<double> out(xd.size(), 0.0);
  if (range > 0.0) {
    for (std::size_t i = 0; i < xd.size(); ++i) out[i] = (xd[i] - xd[lo]) / range;
  }
  return make_result(x.shape(), std::move(out), {&x}, [lo, hi, range](TensorImpl& self) {
    double* gx = parent_grad(self, 0);
    if (!gx || !(range > 0.0)) return;
    double to_lo = 0.0;
    double to_hi = 0.0;
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      const double g = self.grad[i];
      gx[i] += g / range;
      to_lo += g * (self.data[i] - 1.0);
      to_hi -= g * self.data[i];
    }
    gx[lo] += to_lo / range;
    gx[hi] += to_hi / range;
  });
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  require_rank(logits, 1, "cross_entropy");
  const std::size_t classes = logits.dim(0);
  if (label >= classes) {
    throw UsageError("cross_entropy: label " + std::to_string(label) +
                     " out of range for " + std::to_string(classes) + " classes");
  }
  auto z = logits.data();
  const double peak = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp(v - peak);
  const double log_norm = peak + std::log(total);
  return make_result({1}, {log_norm - z[label]}, {&logits},
                     [label, log_norm](TensorImpl& self) {
                       if (double* gz = parent_grad(self, 0)) {
                         const auto& zv = self.parents[0]->data;
                         const double g = self.grad[0];
                         for (std::size_t c = 0; c < zv.size(); ++c) {
                           const double p = std::exp(zv[c] - log_norm);
                           gz[c] += g * (p - (c == label ? 1.0 : 0.0));
                         }
                       }
                     });
}

}  // namespace lctr
