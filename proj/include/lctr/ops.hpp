#pragma once

#include <cstddef>
#include <vector>

#include "lctr/tensor.hpp"

// Differentiable tensor operations. Every function builds an autograd node
// when grad mode is on and at least one operand requires grad.
//
// Broadcasting is deliberately narrow: for the binary elementwise ops the
// second operand must have the same shape as the first or a shape equal to
// a suffix of it (e.g. a bias row added to every row of a matrix, or a
// spatial map multiplied into every channel).
namespace lctr {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// scale * x + shift, elementwise.
Tensor affine(const Tensor& x, double scale, double shift = 0.0);
/// x multiplied by the single entry of s (numel(s) == 1).
Tensor scale_by(const Tensor& x, const Tensor& s);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
/// x[m x k] * w[k x n] + b[n]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor reshape(const Tensor& x, Shape shape);
/// Contiguous sub-range [start, start + length) along axis.
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start,
              std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// image[C x H x W] -> [N x C*P*P]: non-overlapping P x P patches in
/// row-major grid order, each flattened channel-major.
Tensor patchify(const Tensor& image, std::size_t patch);
/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
/// Arithmetic mean over axis 0, accumulated in index order.
Tensor mean_leading(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Normalizes over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);

/// Cross-correlation of x[D x H x W] with kernel[D x C x kh x kw] and an
/// optional bias[C]. Padding must preserve the spatial extent.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              std::size_t padding);
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t padding);

/// x[C x ...] -> [C], mean over all trailing positions.
Tensor global_avg_pool(const Tensor& x);
/// x[C x ...] -> [C]; the gradient goes to the first row-major argmax.
Tensor global_max_pool(const Tensor& x);

/// (x - min) / (max - min) over all entries. A constant input maps to all
/// zeros with zero gradient.
Tensor min_max_normalize(const Tensor& x);

/// -log softmax(logits)[label] for a logits vector.
Tensor cross_entropy(const Tensor& logits, std::size_t label);

}  // namespace lctr
