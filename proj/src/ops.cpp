#include "sdpt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace sdpt {

namespace {

using detail::Node;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Output shape for elementwise binaries: equal shapes, or one side is a
// 1-element tensor acting as a scalar.
Shape binary_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.numel() == 1 && b.numel() > 1) return b.shape();
  if (b.numel() == 1) return a.shape();
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  return a.shape();
}

void accumulate_scalar_aware(Node* dst, bool dst_is_scalar, const std::vector<double>& g,
                             const std::function<double(std::size_t)>& coeff) {
  if (!dst->requires_grad) return;
  dst->ensure_grad();
  if (dst_is_scalar) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * coeff(i);
    dst->grad[0] += acc;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) dst->grad[i] += g[i] * coeff(i);
  }
}

Tensor pointwise_binary(const char* name, const Tensor& a, const Tensor& b,
                        double (*fwd)(double, double),
                        double (*dfa)(double, double),
                        double (*dfb)(double, double)) {
  Shape shape = binary_shape(name, a, b);
  std::size_t n = shape_numel(shape);
  const auto& av = a.values();
  const auto& bv = b.values();
  const bool as = av.size() == 1;
  const bool bs = bv.size() == 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(as ? av[0] : av[i], bs ? bv[0] : bv[i]);
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return make_op(std::move(shape), std::move(out), {a, b},
                 [an, bn, as, bs, dfa, dfb](Node& self) {
                   accumulate_scalar_aware(an, as, self.grad, [&](std::size_t i) {
                     return dfa(as ? an->value[0] : an->value[i], bs ? bn->value[0] : bn->value[i]);
                   });
                   accumulate_scalar_aware(bn, bs, self.grad, [&](std::size_t i) {
                     return dfb(as ? an->value[0] : an->value[i], bs ? bn->value[0] : bn->value[i]);
                   });
                 });
}

Tensor pointwise_unary(const Tensor& a, double (*fwd)(double), double (*grad)(double)) {
  std::size_t n = a.numel();
  const auto& av = a.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  Node* an = a.node().get();
  return make_op(a.shape(), std::move(out), {a}, [an, grad](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      an->grad[i] += self.grad[i] * grad(an->value[i]);
    }
  });
}

// Row-major strides.
std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Decomposes a shape around one axis: (outer, extent, inner).
void axis_split(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& ext,
                std::size_t& inner) {
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  ext = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// C(m,n) += A(m,k) * B(k,n)
void mm_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
            std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_row = A + i * k;
    double* c_row = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double a = a_row[p];
      const double* b_row = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
    }
  }
}

// dA(m,k) += dY(m,n) * B(k,n)^T
void mm_bt_acc(const double* dY, const double* B, double* dA, std::size_t m, std::size_t k,
               std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* dy_row = dY + i * n;
    double* da_row = dA + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* b_row = B + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += dy_row[j] * b_row[j];
      da_row[p] += acc;
    }
  }
}

// dB(k,n) += A(m,k)^T * dY(m,n)
void mm_at_acc(const double* A, const double* dY, double* dB, std::size_t m, std::size_t k,
               std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_row = A + i * k;
    const double* dy_row = dY + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double a = a_row[p];
      double* db_row = dB + p * n;
      for (std::size_t j = 0; j < n; ++j) db_row[j] += a * dy_row[j];
    }
  }
}

struct ConvDims {
  std::size_t N, C, H, W, O, KH, KW, OH, OW;
  std::int64_t p, s;
};

// Shared loop structure for the forward pass and both gradient scatters.
// emit(y_index, x_index, k_index) is called for every contributing triple.
template <typename Emit>
void conv_iterate(const ConvDims& d, Emit emit) {
  for (std::size_t nn = 0; nn < d.N; ++nn) {
    for (std::size_t oo = 0; oo < d.O; ++oo) {
      for (std::size_t cc = 0; cc < d.C; ++cc) {
        for (std::size_t u = 0; u < d.KH; ++u) {
          for (std::size_t v = 0; v < d.KW; ++v) {
            std::size_t kidx = ((oo * d.C + cc) * d.KH + u) * d.KW + v;
            for (std::size_t i = 0; i < d.OH; ++i) {
              std::int64_t ih =
                  static_cast<std::int64_t>(i) * d.s - d.p + static_cast<std::int64_t>(u);
              if (ih < 0 || ih >= static_cast<std::int64_t>(d.H)) continue;
              // valid j range: 0 <= j*s - p + v < W
              std::int64_t lo_num = d.p - static_cast<std::int64_t>(v);
              std::int64_t jlo = lo_num <= 0 ? 0 : (lo_num + d.s - 1) / d.s;
              std::int64_t jhi_num =
                  static_cast<std::int64_t>(d.W) - 1 + d.p - static_cast<std::int64_t>(v);
              std::int64_t jhi = jhi_num < 0 ? -1 : jhi_num / d.s;
              if (jhi >= static_cast<std::int64_t>(d.OW)) {
                jhi = static_cast<std::int64_t>(d.OW) - 1;
              }
              std::size_t xrow = ((nn * d.C + cc) * d.H + static_cast<std::size_t>(ih)) * d.W;
              std::size_t yrow = ((nn * d.O + oo) * d.OH + i) * d.OW;
              for (std::int64_t j = jlo; j <= jhi; ++j) {
                std::size_t iw =
                    static_cast<std::size_t>(j * d.s - d.p + static_cast<std::int64_t>(v));
                emit(yrow + static_cast<std::size_t>(j), xrow + iw, kidx);
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return pointwise_binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return pointwise_binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return pointwise_binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return pointwise_binary(
      "divide", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::size_t n = a.numel();
  std::vector<double> out(n);
  const auto& av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + s;
  Node* an = a.node().get();
  return make_op(a.shape(), std::move(out), {a}, [an](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor mul_scalar(const Tensor& a, double s) {
  std::size_t n = a.numel();
  std::vector<double> out(n);
  const auto& av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * s;
  Node* an = a.node().get();
  return make_op(a.shape(), std::move(out), {a}, [an, s](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
  });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor abs_val(const Tensor& a) {
  // Subgradient 0 at the kink.
  return pointwise_unary(
      a, [](double x) { return std::fabs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor exp_val(const Tensor& a) {
  return pointwise_unary(a, [](double x) { return std::exp(x); },
                         [](double x) { return std::exp(x); });
}

Tensor log_val(const Tensor& a) {
  return pointwise_unary(a, [](double x) { return std::log(x); },
                         [](double x) { return 1.0 / x; });
}

Tensor sqrt_val(const Tensor& a) {
  return pointwise_unary(a, [](double x) { return std::sqrt(x); },
                         [](double x) { return 0.5 / std::sqrt(x); });
}

Tensor relu(const Tensor& a) {
  return pointwise_unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                         [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  return pointwise_unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x) {
        double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Tensor softplus(const Tensor& a) {
  return pointwise_unary(
      a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); },
      [](double x) { return sigmoid(x); });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  Node* an = a.node().get();
  return make_op({1}, {acc}, {a}, [an](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    double g = self.grad[0];
    for (double& d : an->grad) d += g;
  });
}

Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor broadcast_add(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (bs.size() > as.size()) {
    throw ShapeError("broadcast_add: rhs rank exceeds lhs: " + shape_str(as) + " vs " +
                     shape_str(bs));
  }
  for (std::size_t i = 0; i < bs.size(); ++i) {
    if (bs[bs.size() - 1 - i] != as[as.size() - 1 - i]) {
      throw ShapeError("broadcast_add: " + shape_str(bs) + " is not a suffix of " +
                       shape_str(as));
    }
  }
  std::size_t n = a.numel();
  std::size_t bn = b.numel();
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + bv[i % bn];
  Node* anode = a.node().get();
  Node* bnode = b.node().get();
  return make_op(as, std::move(out), {a, b}, [anode, bnode, bn](Node& self) {
    if (anode->requires_grad) {
      anode->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) anode->grad[i] += self.grad[i];
    }
    if (bnode->requires_grad) {
      bnode->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bnode->grad[i % bn] += self.grad[i];
    }
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  const Shape& xs = x.shape();
  if (xs.size() < 2 || bias.ndim() != 1 || bias.shape()[0] != xs[1]) {
    throw ShapeError("add_channel_bias: incompatible shapes " + shape_str(xs) + " and " +
                     shape_str(bias.shape()));
  }
  std::size_t c = xs[1];
  std::size_t inner = 1;
  for (std::size_t i = 2; i < xs.size(); ++i) inner *= xs[i];
  std::size_t n = x.numel();
  const auto& xv = x.values();
  const auto& bv = bias.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] + bv[(i / inner) % c];
  Node* xn = x.node().get();
  Node* bn = bias.node().get();
  return make_op(xs, std::move(out), {x, bias}, [xn, bn, c, inner](Node& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        bn->grad[(i / inner) % c] += self.grad[i];
      }
    }
  });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  Node* an = a.node().get();
  return make_op(shape, a.values(), {a}, [an](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

namespace {

// Visits elements of the transposed tensor in output order, yielding the
// source flat index for each destination flat index.
template <typename Fn>
void for_each_permuted(const Shape& in_shape, const std::vector<std::size_t>& axes, Fn fn) {
  std::size_t nd = in_shape.size();
  Shape out_shape(nd);
  for (std::size_t i = 0; i < nd; ++i) out_shape[i] = in_shape[axes[i]];
  auto in_strides = strides_of(in_shape);
  std::vector<std::size_t> step(nd);
  for (std::size_t i = 0; i < nd; ++i) step[i] = in_strides[axes[i]];
  std::vector<std::size_t> idx(nd, 0);
  std::size_t n = shape_numel(in_shape);
  std::size_t src = 0;
  for (std::size_t dst = 0; dst < n; ++dst) {
    fn(dst, src);
    for (std::size_t d = nd; d-- > 0;) {
      idx[d]++;
      src += step[d];
      if (idx[d] < out_shape[d]) break;
      src -= step[d] * out_shape[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const Shape& in = a.shape();
  std::size_t nd = in.size();
  if (axes.size() != nd) {
    throw ShapeError("permute: axes size " + std::to_string(axes.size()) +
                     " does not match rank of " + shape_str(in));
  }
  std::vector<bool> seen(nd, false);
  for (std::size_t ax : axes) {
    if (ax >= nd || seen[ax]) throw ShapeError("permute: invalid axis order");
    seen[ax] = true;
  }
  Shape out_shape(nd);
  for (std::size_t i = 0; i < nd; ++i) out_shape[i] = in[axes[i]];
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  for_each_permuted(in, axes, [&](std::size_t dst, std::size_t src) { out[dst] = av[src]; });
  Node* an = a.node().get();
  Shape in_copy = in;
  std::vector<std::size_t> axes_copy = axes;
  return make_op(std::move(out_shape), std::move(out), {a},
                 [an, in_copy, axes_copy](Node& self) {
                   if (!an->requires_grad) return;
                   an->ensure_grad();
                   for_each_permuted(in_copy, axes_copy, [&](std::size_t dst, std::size_t src) {
                     an->grad[src] += self.grad[dst];
                   });
                 });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
  std::size_t outer, ext, inner;
  axis_split(a.shape(), axis, outer, ext, inner);
  if (len == 0 || start + len > ext) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  std::vector<double> out(outer * len * inner);
  const auto& av = a.values();
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = av.data() + (o * ext + start) * inner;
    double* dst = out.data() + o * len * inner;
    std::copy(src, src + len * inner, dst);
  }
  Node* an = a.node().get();
  return make_op(std::move(out_shape), std::move(out), {a},
                 [an, outer, ext, inner, start, len](Node& self) {
                   if (!an->requires_grad) return;
                   an->ensure_grad();
                   for (std::size_t o = 0; o < outer; ++o) {
                     double* dst = an->grad.data() + (o * ext + start) * inner;
                     const double* src = self.grad.data() + o * len * inner;
                     for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                   }
                 });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  std::size_t outer, ext0, inner;
  axis_split(ref, axis, outer, ext0, inner);
  std::size_t total_ext = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != ref[i]) {
        throw ShapeError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(ref));
      }
    }
    total_ext += s[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = total_ext;
  std::vector<double> out(outer * total_ext * inner);
  std::size_t off = 0;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> exts;
  for (const Tensor& p : parts) {
    std::size_t e = p.shape()[axis];
    offsets.push_back(off);
    exts.push_back(e);
    const auto& pv = p.values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(pv.data() + o * e * inner, pv.data() + (o + 1) * e * inner,
                out.data() + (o * total_ext + off) * inner);
    }
    off += e;
  }
  std::vector<Node*> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.node().get());
  return make_op(std::move(out_shape), std::move(out), parts,
                 [nodes, offsets, exts, outer, inner, total_ext](Node& self) {
                   for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                     Node* pn = nodes[pi];
                     if (!pn->requires_grad) continue;
                     pn->ensure_grad();
                     std::size_t e = exts[pi];
                     for (std::size_t o = 0; o < outer; ++o) {
                       const double* src =
                           self.grad.data() + (o * total_ext + offsets[pi]) * inner;
                       double* dst = pn->grad.data() + o * e * inner;
                       for (std::size_t i = 0; i < e * inner; ++i) dst[i] += src[i];
                     }
                   }
                 });
}

Tensor index_select0(const Tensor& a, const std::vector<std::size_t>& idx) {
  const Shape& s = a.shape();
  if (s.empty()) throw ShapeError("index_select0: rank-0 input");
  std::size_t row = a.numel() / s[0];
  for (std::size_t i : idx) {
    if (i >= s[0]) {
      throw ShapeError("index_select0: index " + std::to_string(i) + " out of range for " +
                       shape_str(s));
    }
  }
  Shape out_shape = s;
  out_shape[0] = idx.size();
  std::vector<double> out(idx.size() * row);
  const auto& av = a.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy(av.data() + idx[r] * row, av.data() + (idx[r] + 1) * row, out.data() + r * row);
  }
  Node* an = a.node().get();
  std::vector<std::size_t> idx_copy = idx;
  return make_op(std::move(out_shape), std::move(out), {a}, [an, idx_copy, row](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t r = 0; r < idx_copy.size(); ++r) {
      const double* src = self.grad.data() + r * row;
      double* dst = an->grad.data() + idx_copy[r] * row;
      for (std::size_t i = 0; i < row; ++i) dst[i] += src[i];
    }
  });
}

Tensor downsample2(const Tensor& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeError("downsample2: needs at least 2 axes, got " + shape_str(s));
  std::size_t h = s[s.size() - 2];
  std::size_t w = s[s.size() - 1];
  std::size_t oh = (h + 1) / 2;
  std::size_t ow = (w + 1) / 2;
  std::size_t planes = a.numel() / (h * w);
  Shape out_shape = s;
  out_shape[s.size() - 2] = oh;
  out_shape[s.size() - 1] = ow;
  std::vector<double> out(planes * oh * ow);
  const auto& av = a.values();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        out[(p * oh + i) * ow + j] = av[(p * h + 2 * i) * w + 2 * j];
      }
    }
  }
  Node* an = a.node().get();
  return make_op(std::move(out_shape), std::move(out), {a},
                 [an, planes, h, w, oh, ow](Node& self) {
                   if (!an->requires_grad) return;
                   an->ensure_grad();
                   for (std::size_t p = 0; p < planes; ++p) {
                     for (std::size_t i = 0; i < oh; ++i) {
                       for (std::size_t j = 0; j < ow; ++j) {
                         an->grad[(p * h + 2 * i) * w + 2 * j] +=
                             self.grad[(p * oh + i) * ow + j];
                       }
                     }
                   }
                 });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw ShapeError("matmul: inputs must have rank >= 2, got " + shape_str(as) + " and " +
                     shape_str(bs));
  }
  std::size_t m = as[as.size() - 2];
  std::size_t k = as[as.size() - 1];
  bool shared_rhs = bs.size() == 2 && as.size() > 2;
  if (!shared_rhs && bs.size() != as.size()) {
    throw ShapeError("matmul: rank mismatch " + shape_str(as) + " vs " + shape_str(bs));
  }
  std::size_t kb = bs[bs.size() - 2];
  std::size_t n = bs[bs.size() - 1];
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ: lhs " + shape_str(as) + " rhs " +
                     shape_str(bs));
  }
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < as.size(); ++i) {
    batch *= as[i];
    if (!shared_rhs && bs[i] != as[i]) {
      throw ShapeError("matmul: batch extents differ: lhs " + shape_str(as) + " rhs " +
                       shape_str(bs));
    }
  }
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t t = 0; t < batch; ++t) {
    mm_acc(av.data() + t * m * k, bv.data() + (shared_rhs ? 0 : t * k * n),
           out.data() + t * m * n, m, k, n);
  }
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return make_op(std::move(out_shape), std::move(out), {a, b},
                 [an, bn, batch, m, k, n, shared_rhs](Node& self) {
                   if (an->requires_grad) {
                     an->ensure_grad();
                     for (std::size_t t = 0; t < batch; ++t) {
                       mm_bt_acc(self.grad.data() + t * m * n,
                                 bn->value.data() + (shared_rhs ? 0 : t * k * n),
                                 an->grad.data() + t * m * k, m, k, n);
                     }
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     for (std::size_t t = 0; t < batch; ++t) {
                       mm_at_acc(an->value.data() + t * m * k, self.grad.data() + t * m * n,
                                 bn->grad.data() + (shared_rhs ? 0 : t * k * n), m, k, n);
                     }
                   }
                 });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  if (!b.defined()) return y;
  return broadcast_add(y, b);
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  std::size_t outer, ext, inner;
  axis_split(a.shape(), axis, outer, ext, inner);
  const auto& av = a.values();
  std::vector<double> out(a.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      std::size_t base = o * ext * inner + in;
      double mx = av[base];
      for (std::size_t e = 1; e < ext; ++e) mx = std::max(mx, av[base + e * inner]);
      double denom = 0.0;
      for (std::size_t e = 0; e < ext; ++e) {
        double v = std::exp(av[base + e * inner] - mx);
        out[base + e * inner] = v;
        denom += v;
      }
      for (std::size_t e = 0; e < ext; ++e) out[base + e * inner] /= denom;
    }
  }
  Node* an = a.node().get();
  return make_op(a.shape(), std::move(out), {a}, [an, outer, ext, inner](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        std::size_t base = o * ext * inner + in;
        double dot = 0.0;
        for (std::size_t e = 0; e < ext; ++e) {
          std::size_t i = base + e * inner;
          dot += self.grad[i] * self.value[i];
        }
        for (std::size_t e = 0; e < ext; ++e) {
          std::size_t i = base + e * inner;
          an->grad[i] += (self.grad[i] - dot) * self.value[i];
        }
      }
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t padding) {
  const Shape& xs = x.shape();
  const Shape& ks = k.shape();
  if (xs.size() != 4 || ks.size() != 4) {
    throw ShapeError("conv2d: expected rank-4 input and kernel, got " + shape_str(xs) +
                     " and " + shape_str(ks));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (xs[1] != ks[1]) {
    throw ShapeError("conv2d: channel mismatch: input " + shape_str(xs) + " kernel " +
                     shape_str(ks));
  }
  std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  std::size_t O = ks[0], KH = ks[2], KW = ks[3];
  std::int64_t oh_s = (static_cast<std::int64_t>(H) + 2 * static_cast<std::int64_t>(padding) -
                       static_cast<std::int64_t>(KH)) /
                          static_cast<std::int64_t>(stride) +
                      1;
  std::int64_t ow_s = (static_cast<std::int64_t>(W) + 2 * static_cast<std::int64_t>(padding) -
                       static_cast<std::int64_t>(KW)) /
                          static_cast<std::int64_t>(stride) +
                      1;
  if (oh_s < 1 || ow_s < 1 ||
      static_cast<std::int64_t>(H) + 2 * static_cast<std::int64_t>(padding) <
          static_cast<std::int64_t>(KH) ||
      static_cast<std::int64_t>(W) + 2 * static_cast<std::int64_t>(padding) <
          static_cast<std::int64_t>(KW)) {
    throw ConfigError("conv2d: zero-extent output for input " + shape_str(xs) + " kernel " +
                      shape_str(ks));
  }
  std::size_t OH = static_cast<std::size_t>(oh_s), OW = static_cast<std::size_t>(ow_s);
  ConvDims d{N, C, H, W, O, KH, KW, OH, OW,
             static_cast<std::int64_t>(padding), static_cast<std::int64_t>(stride)};
  std::vector<double> out(N * O * OH * OW, 0.0);
  const auto& xv = x.values();
  const auto& kv = k.values();
  conv_iterate(d, [&](std::size_t yi, std::size_t xi, std::size_t ki) {
    out[yi] += xv[xi] * kv[ki];
  });

  Node* xn = x.node().get();
  Node* kn = k.node().get();
  return make_op({N, O, OH, OW}, std::move(out), {x, k}, [xn, kn, d](Node& self) {
    bool gx = xn->requires_grad;
    bool gk = kn->requires_grad;
    if (gx) xn->ensure_grad();
    if (gk) kn->ensure_grad();
    conv_iterate(d, [&](std::size_t yi, std::size_t xi, std::size_t ki) {
      double g = self.grad[yi];
      if (gx) xn->grad[xi] += g * kn->value[ki];
      if (gk) kn->grad[ki] += g * xn->value[xi];
    });
  });
}

Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw ShapeError("resize_bilinear: needs spatial axes, got " + shape_str(xs));
  if (out_h == 0 || out_w == 0) throw ConfigError("resize_bilinear: zero output extent");
  std::size_t H = xs[xs.size() - 2], W = xs[xs.size() - 1];
  std::size_t planes = x.numel() / (H * W);
  Shape out_shape = xs;
  out_shape[xs.size() - 2] = out_h;
  out_shape[xs.size() - 1] = out_w;

  // Precomputed per-axis stencils.
  struct Tap {
    std::size_t i0, i1;
    double w1;  // weight of i1; i0 gets 1 - w1
  };
  auto make_taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
      if (s < 0.0) s = 0.0;
      double max_s = static_cast<double>(in - 1);
      if (s > max_s) s = max_s;
      std::size_t i0 = static_cast<std::size_t>(s);
      if (i0 >= in - 1 && in > 1) i0 = in - 2;
      std::size_t i1 = (in == 1) ? 0 : i0 + 1;
      double w1 = (in == 1) ? 0.0 : s - static_cast<double>(i0);
      taps[o] = {i0, i1, w1};
    }
    return taps;
  };
  auto ty = make_taps(H, out_h);
  auto tx = make_taps(W, out_w);

  std::vector<double> out(planes * out_h * out_w);
  const auto& xv = x.values();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = xv.data() + pl * H * W;
    double* dst = out.data() + pl * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const Tap& a = ty[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const Tap& b = tx[j];
        double v00 = src[a.i0 * W + b.i0];
        double v01 = src[a.i0 * W + b.i1];
        double v10 = src[a.i1 * W + b.i0];
        double v11 = src[a.i1 * W + b.i1];
        double top = v00 + (v01 - v00) * b.w1;
        double bot = v10 + (v11 - v10) * b.w1;
        dst[i * out_w + j] = top + (bot - top) * a.w1;
      }
    }
  }
  Node* xn = x.node().get();
  return make_op(std::move(out_shape), std::move(out), {x},
                 [xn, ty, tx, planes, H, W, out_h, out_w](Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (std::size_t pl = 0; pl < planes; ++pl) {
                     double* dst = xn->grad.data() + pl * H * W;
                     const double* g = self.grad.data() + pl * out_h * out_w;
                     for (std::size_t i = 0; i < out_h; ++i) {
                       const Tap& a = ty[i];
                       for (std::size_t j = 0; j < out_w; ++j) {
                         const Tap& b = tx[j];
                         double gv = g[i * out_w + j];
                         dst[a.i0 * W + b.i0] += gv * (1.0 - a.w1) * (1.0 - b.w1);
                         dst[a.i0 * W + b.i1] += gv * (1.0 - a.w1) * b.w1;
                         dst[a.i1 * W + b.i0] += gv * a.w1 * (1.0 - b.w1);
                         dst[a.i1 * W + b.i1] += gv * a.w1 * b.w1;
                       }
                     }
                   }
                 });
}

Tensor layernorm(const Tensor& x, std::size_t axis, const Tensor& gamma, const Tensor& beta,
                 double eps) {
  std::size_t outer, ext, inner;
  axis_split(x.shape(), axis, outer, ext, inner);
  if (gamma.ndim() != 1 || gamma.shape()[0] != ext || beta.ndim() != 1 ||
      beta.shape()[0] != ext) {
    throw ShapeError("layernorm: gamma/beta must be (" + std::to_string(ext) + ",), got " +
                     shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  std::vector<double> out(x.numel());
  auto stats = std::make_shared<std::vector<double>>(outer * inner * 2);  // mu, inv_std
  double m = static_cast<double>(ext);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      std::size_t base = o * ext * inner + in;
      double mu = 0.0;
      for (std::size_t e = 0; e < ext; ++e) mu += xv[base + e * inner];
      mu /= m;
      double var = 0.0;
      for (std::size_t e = 0; e < ext; ++e) {
        double d = xv[base + e * inner] - mu;
        var += d * d;
      }
      var /= m;
      double istd = 1.0 / std::sqrt(var + eps);
      (*stats)[(o * inner + in) * 2] = mu;
      (*stats)[(o * inner + in) * 2 + 1] = istd;
      for (std::size_t e = 0; e < ext; ++e) {
        out[base + e * inner] = gv[e] * (xv[base + e * inner] - mu) * istd + bv[e];
      }
    }
  }
  Node* xn = x.node().get();
  Node* gn = gamma.node().get();
  Node* bn = beta.node().get();
  return make_op(x.shape(), std::move(out), {x, gamma, beta},
                 [xn, gn, bn, stats, outer, ext, inner, m](Node& self) {
                   if (xn->requires_grad) xn->ensure_grad();
                   if (gn->requires_grad) gn->ensure_grad();
                   if (bn->requires_grad) bn->ensure_grad();
                   for (std::size_t o = 0; o < outer; ++o) {
                     for (std::size_t in = 0; in < inner; ++in) {
                       std::size_t base = o * ext * inner + in;
                       double mu = (*stats)[(o * inner + in) * 2];
                       double istd = (*stats)[(o * inner + in) * 2 + 1];
                       double sum_dxhat = 0.0;
                       double sum_dxhat_xc = 0.0;
                       for (std::size_t e = 0; e < ext; ++e) {
                         std::size_t i = base + e * inner;
                         double xc = xn->value[i] - mu;
                         double dxhat = self.grad[i] * gn->value[e];
                         sum_dxhat += dxhat;
                         sum_dxhat_xc += dxhat * xc;
                         if (gn->requires_grad) gn->grad[e] += self.grad[i] * xc * istd;
                         if (bn->requires_grad) bn->grad[e] += self.grad[i];
                       }
                       if (xn->requires_grad) {
                         double dvar = sum_dxhat_xc * (-0.5) * istd * istd * istd;
                         double dmu = -istd * sum_dxhat;
                         for (std::size_t e = 0; e < ext; ++e) {
                           std::size_t i = base + e * inner;
                           double xc = xn->value[i] - mu;
                           xn->grad[i] += self.grad[i] * gn->value[e] * istd +
                                          dvar * 2.0 * xc / m + dmu / m;
                         }
                       }
                     }
                   }
                 });
}

}  // namespace sdpt
