#pragma once

#include <cstddef>
#include <vector>

#include "cdcl/tensor.hpp"

// Differentiable operations. Every function records a backward rule on the
// tape when gradient recording is enabled and an input requires gradients.
namespace cdcl {

// Elementwise, operands of identical shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor sum(const Tensor& a);
// Mean over one axis; the axis is removed from the result shape. Rank-1
// inputs reduce to shape [1].
Tensor mean(const Tensor& a, std::size_t axis);

Tensor matmul(const Tensor& a, const Tensor& b);
// a[m x k] * b[n x k]^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor flatten(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);

// x[c_in x H x W] * w[c_out x c_in x kh x kw] with zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding);
// x[c x H x W], no padding.
Tensor avg_pool2d(const Tensor& x, std::size_t kh, std::size_t kw, std::size_t sh, std::size_t sw);
// y[c,h,w] = x[c,h,w] * gain[c] + shift[c]
Tensor channel_affine(const Tensor& x, const Tensor& gain, const Tensor& shift);
// x[... x n] + b[n]
Tensor add_bias(const Tensor& x, const Tensor& b);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor relu(const Tensor& x);

// Normalizes each row along the last axis. `gain`/`shift` of shape [n] are
// optional (pass undefined tensors to skip the affine part).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps = 1e-5);

inline constexpr double kBceEpsilon = 1e-7;

// Mean binary cross-entropy over all elements, probabilities clamped to
// [eps, 1 - eps]. Targets may be soft.
Tensor bce_loss(const Tensor& p, const Tensor& y, double eps = kBceEpsilon);
// bce_loss(sigmoid(z), y, eps) computed from the logits, which keeps full
// precision when a probability is close to 0 or 1.
Tensor bce_with_logits(const Tensor& z, const Tensor& y, double eps = kBceEpsilon);

}  // namespace cdcl
