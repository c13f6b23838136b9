#pragma once

#include <cstddef>
#include <vector>

#include "dconn/tensor.hpp"

namespace dconn {

// Cross-correlation over [N,C,H,W] with a [K,C,kh,kw] kernel (kh,kw in {1,3}),
// padding (k-1)/2 so stride 1 preserves spatial size. Stride 1 or 2.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride = 1);

// ReLU uses subgradient 0 at exactly 0.
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);

// Elementwise binary ops. Operands must have equal rank; size-1 dims broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }

Tensor sum(const Tensor& x);   // -> [1]
Tensor mean(const Tensor& x);  // -> [1]
Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim = false);
// Ties resolve to the lowest index; gradient flows to that entry only.
Tensor max_axis(const Tensor& x, std::size_t axis, bool keepdim = false);

// [N,C,H,W] -> [N,C], mean over H*W.
Tensor gap(const Tensor& x);
// Bilinear, align_corners=false.
Tensor upsample_bilinear(const Tensor& x, std::size_t factor);

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor bmm(const Tensor& a, const Tensor& b);     // [B,m,k] x [B,k,n]
Tensor transpose_last(const Tensor& x);           // swap the last two dims
Tensor softmax(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Split axis 1 into `parts` equal groups.
std::vector<Tensor> channel_slice(const Tensor& x, std::size_t parts);
Tensor channel_concat(const std::vector<Tensor>& parts);

// y[..., r, c] = x[..., r + dr, c + dc], zero where the source is out of bounds.
Tensor shift2d(const Tensor& x, int dr, int dc);

}  // namespace dconn
