#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vclr/nd/tensor.hpp"

namespace vclr::nd {

// Elementwise binary ops broadcast numpy-style: shapes are right-aligned and
// every axis must match or be 1 on one side.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double k);
Tensor add_scalar(const Tensor& a, double k);
Tensor pow_scalar(const Tensor& a, double p);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                // rank 2
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor index_select(const Tensor& a, std::span<const std::size_t> rows);  // axis 0

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis, bool keepdim = false);

Tensor softmax(const Tensor& a, std::size_t axis);
// Normalizes over the last axis, then applies gain and bias (both [last]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Rows of `a` hold h*w row-major grids; each is resampled to H*W with
// half-pixel-centred bilinear interpolation (edge clamped).
Tensor resize_bilinear(const Tensor& a, std::size_t h, std::size_t w, std::size_t H, std::size_t W);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double k) { return scale(a, k); }
inline Tensor operator*(double k, const Tensor& a) { return scale(a, k); }
inline Tensor operator+(const Tensor& a, double k) { return add_scalar(a, k); }
inline Tensor operator+(double k, const Tensor& a) { return add_scalar(a, k); }
inline Tensor operator-(const Tensor& a, double k) { return add_scalar(a, -k); }
inline Tensor operator-(double k, const Tensor& a) { return add_scalar(neg(a), k); }

}  // namespace vclr::nd
