#include "sdpt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "sdpt/errors.hpp"
#include "sdpt/ops.hpp"

namespace sdpt {

namespace {

void check_depth_like(const Tensor& t, const char* what) {
  if (t.ndim() != 4 || t.shape()[1] != 1) {
    throw ShapeError(std::string(what) + ": expected (t, 1, h, w), got " + shape_str(t.shape()));
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

double mask_count(const Tensor& mask) {
  double n = 0.0;
  for (double v : mask.values()) n += v;
  return n;
}

Tensor zero_scalar() { return Tensor::zeros({1}); }

}  // namespace

std::pair<Tensor, Tensor> align_lsq(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  check_same_shape(pred, gt, "align_lsq");
  check_same_shape(pred, mask, "align_lsq");
  const double n = mask_count(mask);
  if (n <= 0.0) throw NumericError("align_lsq: empty mask");

  Tensor mp = mul_scalar(sum(mul(pred, mask)), 1.0 / n);
  Tensor mg = mul_scalar(sum(mul(gt, mask)), 1.0 / n);
  Tensor dp = sub(pred, mp);
  Tensor dg = sub(gt, mg);
  Tensor cov = mul_scalar(sum(mul(mul(dp, dg), mask)), 1.0 / n);
  Tensor var = mul_scalar(sum(mul(mul(dp, dp), mask)), 1.0 / n);
  // Tiny floor keeps a constant prediction from dividing by zero; for any
  // non-degenerate input the perturbation is ~1e-12 relative.
  Tensor s = divide(cov, add_scalar(var, 1e-12));
  Tensor t = sub(mg, mul(s, mp));
  return {s, t};
}

Tensor align_per_frame(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  check_depth_like(pred, "align_per_frame");
  check_same_shape(pred, gt, "align_per_frame");
  check_same_shape(pred, mask, "align_per_frame");
  const std::size_t t = pred.shape()[0];
  std::vector<Tensor> frames;
  for (std::size_t f = 0; f < t; ++f) {
    Tensor pf = slice(pred, 0, f, 1);
    Tensor mf = slice(mask, 0, f, 1);
    if (mask_count(mf) == 0.0) {
      frames.push_back(pf);
      continue;
    }
    auto [s, sh] = align_lsq(pf, slice(gt, 0, f, 1), mf);
    frames.push_back(add(mul(pf, s), sh));
  }
  return t == 1 ? frames[0] : concat(frames, 0);
}

Tensor ssi_trim_from_aligned(const Tensor& aligned, const Tensor& gt, const Tensor& mask,
                             double trim) {
  check_depth_like(aligned, "ssi_trim");
  check_same_shape(aligned, gt, "ssi_trim");
  check_same_shape(aligned, mask, "ssi_trim");
  if (trim < 0.0 || trim >= 1.0) {
    throw ConfigError("ssi_trim: trim fraction must be in [0, 1), got " + std::to_string(trim));
  }
  const std::size_t t = aligned.shape()[0];

  Tensor total;
  for (std::size_t f = 0; f < t; ++f) {
    Tensor mf = slice(mask, 0, f, 1);
    Tensor r = mul(abs_val(sub(slice(aligned, 0, f, 1), slice(gt, 0, f, 1))), mf);
    // Rank the masked residuals by value (stable on ties via the index) and
    // drop the largest floor(trim * n_valid).
    const auto& rv = r.values();
    const auto& mv = mf.values();
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t i = 0; i < rv.size(); ++i) {
      if (mv[i] == 0.0) continue;
      // Refuse to rank non-finite residuals (comparison order is undefined).
      if (!std::isfinite(rv[i])) throw NumericError("ssi_trim: non-finite residual");
      order.emplace_back(rv[i], i);
    }
    if (order.empty()) continue;
    std::sort(order.begin(), order.end());
    const std::size_t kept = order.size() - std::size_t(trim * double(order.size()));
    std::vector<double> keep(rv.size(), 0.0);
    for (std::size_t i = 0; i < kept; ++i) keep[order[i].second] = 1.0;
    Tensor frame_loss =
        mul_scalar(sum(mul(r, Tensor::from_data(r.shape(), keep))), 1.0 / double(kept));
    total = total.defined() ? add(total, frame_loss) : frame_loss;
  }
  if (!total.defined()) return zero_scalar();
  return mul_scalar(total, 1.0 / double(t));
}

Tensor ssi_trim(const Tensor& pred, const Tensor& gt, const Tensor& mask, double trim) {
  return ssi_trim_from_aligned(align_per_frame(pred, gt, mask), gt, mask, trim);
}

Tensor gm_from_aligned(const Tensor& aligned, const Tensor& gt, const Tensor& mask,
                       std::size_t scales) {
  check_depth_like(aligned, "gradient_matching");
  check_same_shape(aligned, gt, "gradient_matching");
  check_same_shape(aligned, mask, "gradient_matching");
  if (scales == 0) throw ConfigError("gradient_matching: need at least one scale");
  const std::size_t t = aligned.shape()[0];

  Tensor total;
  for (std::size_t f = 0; f < t; ++f) {
    Tensor r = sub(slice(aligned, 0, f, 1), slice(gt, 0, f, 1));
    Tensor m = slice(mask, 0, f, 1);
    Tensor frame_loss;
    for (std::size_t k = 0; k < scales; ++k) {
      const std::size_t h = r.shape()[2], w = r.shape()[3];
      for (int axis : {3, 2}) {
        const std::size_t ext = axis == 3 ? w : h;
        if (ext < 2) continue;
        Tensor d = sub(slice(r, axis, 1, ext - 1), slice(r, axis, 0, ext - 1));
        // A neighbour-difference is valid only when both mask samples are.
        Tensor dm = mul(slice(m, axis, 1, ext - 1), slice(m, axis, 0, ext - 1));
        const double n = mask_count(dm);
        if (n == 0.0) continue;
        Tensor term = mul_scalar(sum(mul(abs_val(d), dm)), 1.0 / n);
        frame_loss = frame_loss.defined() ? add(frame_loss, term) : term;
      }
      if (k + 1 < scales) {
        if (r.shape()[2] < 2 && r.shape()[3] < 2) break;
        r = downsample2(r);
        m = downsample2(m);
      }
    }
    if (frame_loss.defined()) total = total.defined() ? add(total, frame_loss) : frame_loss;
  }
  if (!total.defined()) return zero_scalar();
  return mul_scalar(total, 1.0 / double(t));
}

Tensor gradient_matching(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                         std::size_t scales) {
  return gm_from_aligned(align_per_frame(pred, gt, mask), gt, mask, scales);
}

Tensor flicker_mask(const Tensor& frames, double tau) {
  if (frames.ndim() != 4) {
    throw ShapeError("flicker_mask: expected (t, c, h, w), got " + shape_str(frames.shape()));
  }
  const Shape& s = frames.shape();
  const std::size_t t = s[0], c = s[1], h = s[2], w = s[3];
  if (t < 2) throw ShapeError("flicker_mask: need at least two frames");
  const auto& v = frames.values();
  std::vector<double> m((t - 1) * h * w, 0.0);
  for (std::size_t f = 0; f + 1 < t; ++f) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t base = ((f * c + ch) * h + y) * w + x;
          acc += std::abs(v[base + c * h * w] - v[base]);
        }
        m[(f * h + y) * w + x] = (acc / double(c) < tau) ? 1.0 : 0.0;
      }
    }
  }
  return Tensor::from_data({t - 1, 1, h, w}, m);
}

Tensor tgm_from_aligned(const Tensor& aligned, const Tensor& gt, const Tensor& pair_mask,
                        TgmStats* stats) {
  check_depth_like(aligned, "tgm");
  check_same_shape(aligned, gt, "tgm");
  const std::size_t t = aligned.shape()[0];
  if (t < 2) throw ShapeError("tgm: need at least two frames");
  check_depth_like(pair_mask, "tgm pair mask");
  if (pair_mask.shape()[0] != t - 1 || pair_mask.shape()[2] != aligned.shape()[2] ||
      pair_mask.shape()[3] != aligned.shape()[3]) {
    throw ShapeError("tgm: pair mask " + shape_str(pair_mask.shape()) + " incompatible with " +
                     shape_str(aligned.shape()));
  }

  if (stats) {
    stats->pairs = t - 1;
    stats->empty_pairs = 0;
    stats->valid_px = 0;
    const std::size_t per = pair_mask.shape()[2] * pair_mask.shape()[3];
    for (std::size_t f = 0; f + 1 < t; ++f) {
      std::size_t n = 0;
      for (std::size_t i = 0; i < per; ++i) {
        if (pair_mask.values()[f * per + i] != 0.0) ++n;
      }
      stats->valid_px += n;
      if (n == 0) ++stats->empty_pairs;
    }
  }

  const double n = mask_count(pair_mask);
  if (n == 0.0) return zero_scalar();
  Tensor dp = sub(slice(aligned, 0, 1, t - 1), slice(aligned, 0, 0, t - 1));
  Tensor dg = sub(slice(gt, 0, 1, t - 1), slice(gt, 0, 0, t - 1));
  return mul_scalar(sum(mul(abs_val(sub(dp, dg)), pair_mask)), 1.0 / n);
}

Tensor tgm_loss(const Tensor& pred, const Tensor& gt, const Tensor& valid_mask,
                const Tensor& pair_mask, TgmStats* stats) {
  check_same_shape(pred, valid_mask, "tgm");
  auto [s, t] = align_lsq(pred, gt, valid_mask);
  return tgm_from_aligned(add(mul(pred, s), t), gt, pair_mask, stats);
}

namespace {

LossBreakdown spatial_terms(const Tensor& pred, const Tensor& gt, const Tensor& valid_mask,
                            const LossWeights& w) {
  LossBreakdown b;
  Tensor aligned = align_per_frame(pred, gt, valid_mask);
  b.ssi = ssi_trim_from_aligned(aligned, gt, valid_mask, w.trim);
  b.gm = gm_from_aligned(aligned, gt, valid_mask, w.gm_scales);
  return b;
}

}  // namespace

LossBreakdown combined_video_loss(const Tensor& pred, const Tensor& gt, const Tensor& valid_mask,
                                  const Tensor& frames, const LossWeights& w) {
  if (frames.shape()[0] != pred.shape()[0]) {
    throw ShapeError("combined_video_loss: frames " + shape_str(frames.shape()) +
                     " vs depth " + shape_str(pred.shape()));
  }
  LossBreakdown b = spatial_terms(pred, gt, valid_mask, w);
  const std::size_t t = pred.shape()[0];
  Tensor flick = flicker_mask(frames, w.flicker_tau);
  Tensor pair_valid =
      mul(slice(valid_mask, 0, 1, t - 1), slice(valid_mask, 0, 0, t - 1));
  b.tgm = tgm_loss(pred, gt, valid_mask, mul(flick, pair_valid), &b.tgm_stats);
  b.total = add(add(mul_scalar(b.ssi, w.ssi), mul_scalar(b.gm, w.gm)), mul_scalar(b.tgm, w.tgm));
  return b;
}

LossBreakdown combined_image_loss(const Tensor& pred, const Tensor& gt, const Tensor& valid_mask,
                                  const LossWeights& w) {
  LossBreakdown b = spatial_terms(pred, gt, valid_mask, w);
  b.tgm = zero_scalar();
  b.total = add(mul_scalar(b.ssi, w.ssi), mul_scalar(b.gm, w.gm));
  return b;
}

}  // namespace sdpt
