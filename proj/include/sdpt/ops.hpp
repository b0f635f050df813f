#ifndef SDPT_OPS_HPP
#define SDPT_OPS_HPP

#include <cstddef>
#include <vector>

#include "sdpt/tensor.hpp"

namespace sdpt {

// Elementwise binary ops accept equal shapes, or a 1-element tensor on either
// side which broadcasts as a scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor abs_val(const Tensor& a);
Tensor exp_val(const Tensor& a);
Tensor log_val(const Tensor& a);
Tensor sqrt_val(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);      // exact erf form
Tensor softplus(const Tensor& a);  // numerically stable log(1+exp(x))

Tensor sum(const Tensor& a);   // scalar
Tensor mean(const Tensor& a);  // scalar

// b broadcasts when its shape is a trailing suffix of a's shape.
Tensor broadcast_add(const Tensor& a, const Tensor& b);
// x: (N, C, ...spatial), bias: (C,)
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

Tensor reshape(const Tensor& a, const Shape& shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Gathers indices along axis 0 (e.g. selecting frames of a clip).
Tensor index_select0(const Tensor& a, const std::vector<std::size_t>& idx);
// Takes every second sample of the last two axes (top-left phase).
Tensor downsample2(const Tensor& a);

// Batched matrix product. a: (B..., m, k); b: (B..., k, n) with identical
// batch extents, or plain (k, n) shared across the batch.
Tensor matmul(const Tensor& a, const Tensor& b);
// x: (..., k) times w: (k, n) plus bias (n,). Bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor softmax(const Tensor& a, std::size_t axis);

// Cross-correlation with square stride/padding. x: (N, C, H, W),
// k: (O, C, kh, kw) -> (N, O, oh, ow).
Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t padding);

// Bilinear resize on the last two axes. Sample points follow
// src = (dst + 0.5) * (in_extent / out_extent) - 0.5, clamped to the valid
// range (half-pixel centers, no corner alignment).
Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

// Normalizes over a single axis: y = gamma * (x - mu) / sqrt(var + eps) + beta
// with population variance. gamma/beta: (extent(axis),).
Tensor layernorm(const Tensor& x, std::size_t axis, const Tensor& gamma,
                 const Tensor& beta, double eps = 1e-5);

}  // namespace sdpt

#endif
