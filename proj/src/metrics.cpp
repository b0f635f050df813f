#include "sdpt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdpt/errors.hpp"

namespace sdpt {

namespace {

struct AlignResult {
  double s = 1.0, t = 0.0;
};

// Exact least-squares scale/shift on raw doubles. On pred == gt the sums for
// cov and var are computed identically, so s = 1.0 and t = 0.0 bit-for-bit
// and alignment is a true no-op.
AlignResult solve_align(const double* pred, const double* gt, const double* valid,
                        std::size_t n) {
  double cnt = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (valid[i] == 0.0) continue;
    cnt += 1.0;
    sp += pred[i];
    sg += gt[i];
  }
  AlignResult r;
  if (cnt == 0.0) return r;
  const double mp = sp / cnt, mg = sg / cnt;
  double cov = 0.0, var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (valid[i] == 0.0) continue;
    cov += (pred[i] - mp) * (gt[i] - mg);
    var += (pred[i] - mp) * (pred[i] - mp);
  }
  if (var == 0.0) {
    r.s = 1.0;
    r.t = mg - mp;
  } else {
    r.s = cov / var;
    r.t = mg - r.s * mp;
  }
  return r;
}

struct Planes {
  std::size_t t = 0, h = 0, w = 0, hw = 0;
  const double* at(const std::vector<double>& v, std::size_t f) const { return v.data() + f * hw; }
};

std::vector<double> static_pair_mask(const Tensor& frames, std::size_t t, std::size_t h,
                                     std::size_t w, double tau) {
  std::vector<double> m((t - 1) * h * w, 1.0);
  if (!frames.defined()) return m;
  const Shape& fs = frames.shape();
  if (fs.size() != 4 || fs[0] != t || fs[2] != h || fs[3] != w) {
    throw ShapeError("evaluate: frames " + shape_str(fs) + " incompatible with depth grid");
  }
  const std::size_t c = fs[1];
  const auto& v = frames.values();
  for (std::size_t f = 0; f + 1 < t; ++f) {
    for (std::size_t i = 0; i < h * w; ++i) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (f * c + ch) * h * w + i;
        acc += std::abs(v[base + c * h * w] - v[base]);
      }
      m[f * h * w + i] = (acc / double(c) < tau) ? 1.0 : 0.0;
    }
  }
  return m;
}

}  // namespace

EvalReport evaluate_sequence(const SequenceData& data, const MetricOptions& opt) {
  if (data.pred.ndim() != 4 || data.pred.shape()[1] != 1) {
    throw ShapeError("evaluate: pred must be (t, 1, h, w), got " + shape_str(data.pred.shape()));
  }
  if (data.gt.shape() != data.pred.shape()) {
    throw ShapeError("evaluate: gt " + shape_str(data.gt.shape()) + " vs pred " +
                     shape_str(data.pred.shape()));
  }
  Planes pl;
  pl.t = data.pred.shape()[0];
  pl.h = data.pred.shape()[2];
  pl.w = data.pred.shape()[3];
  pl.hw = pl.h * pl.w;

  std::vector<double> valid;
  if (data.valid.defined()) {
    if (data.valid.shape() != data.pred.shape()) {
      throw ShapeError("evaluate: valid mask " + shape_str(data.valid.shape()) + " vs pred " +
                       shape_str(data.pred.shape()));
    }
    valid = data.valid.values();
  } else {
    valid.assign(pl.t * pl.hw, 1.0);
  }
  if (!data.flows.empty()) {
    if (data.flows.size() != pl.t - 1) {
      throw ShapeError("evaluate: expected " + std::to_string(pl.t - 1) + " flows, got " +
                       std::to_string(data.flows.size()));
    }
    for (const auto& f : data.flows) {
      if (f.h != pl.h || f.w != pl.w) throw ShapeError("evaluate: flow grid mismatch");
    }
  }

  // Aligned prediction.
  std::vector<double> aligned = data.pred.values();
  const auto& gt = data.gt.values();
  if (opt.align == AlignMode::affine) {
    if (opt.granularity == Granularity::per_sequence) {
      AlignResult a = solve_align(aligned.data(), gt.data(), valid.data(), aligned.size());
      for (std::size_t i = 0; i < aligned.size(); ++i) aligned[i] = a.s * aligned[i] + a.t;
    } else {
      for (std::size_t f = 0; f < pl.t; ++f) {
        double* p = aligned.data() + f * pl.hw;
        AlignResult a = solve_align(p, gt.data() + f * pl.hw, valid.data() + f * pl.hw, pl.hw);
        for (std::size_t i = 0; i < pl.hw; ++i) p[i] = a.s * p[i] + a.t;
      }
    }
  }

  EvalReport rep;

  // Spatial accuracy.
  {
    double abs_acc = 0.0;
    std::size_t n = 0, hits = 0;
    for (std::size_t i = 0; i < aligned.size(); ++i) {
      if (valid[i] == 0.0 || gt[i] <= 0.0) continue;
      ++n;
      abs_acc += std::abs(aligned[i] - gt[i]) / gt[i];
      if (aligned[i] > 0.0 && std::max(aligned[i] / gt[i], gt[i] / aligned[i]) <
                                  opt.delta_threshold) {
        ++hits;
      }
    }
    rep.valid_px = n;
    if (n > 0) {
      abs_acc /= double(n);
      rep.absrel = abs_acc;
      rep.delta1 = 100.0 * double(hits) / double(n);
    }
  }

  if (pl.t < 2) return rep;

  // Temporal gradient error on static pixels (plain frame differences).
  {
    std::vector<double> stat = static_pair_mask(data.frames, pl.t, pl.h, pl.w, opt.flicker_tau);
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t f = 0; f + 1 < pl.t; ++f) {
      std::size_t pair_n = 0;
      for (std::size_t i = 0; i < pl.hw; ++i) {
        if (stat[f * pl.hw + i] == 0.0 || valid[f * pl.hw + i] == 0.0 ||
            valid[(f + 1) * pl.hw + i] == 0.0) {
          continue;
        }
        const double dp = aligned[(f + 1) * pl.hw + i] - aligned[f * pl.hw + i];
        const double dg = gt[(f + 1) * pl.hw + i] - gt[f * pl.hw + i];
        acc += std::abs(dp - dg);
        ++pair_n;
      }
      n += pair_n;
      if (pair_n == 0) ++rep.tgm_empty_pairs;
    }
    if (n > 0) rep.tgm = acc / double(n);
  }

  // Temporal correlation on plain differences; pairs whose differences are
  // elementwise identical score 1 outright (covers the all-static case), and
  // pairs where either side has zero variance are skipped.
  {
    double acc = 0.0;
    std::size_t used = 0;
    for (std::size_t f = 0; f + 1 < pl.t; ++f) {
      std::vector<double> dp, dg;
      for (std::size_t i = 0; i < pl.hw; ++i) {
        if (valid[f * pl.hw + i] == 0.0 || valid[(f + 1) * pl.hw + i] == 0.0) continue;
        dp.push_back(aligned[(f + 1) * pl.hw + i] - aligned[f * pl.hw + i]);
        dg.push_back(gt[(f + 1) * pl.hw + i] - gt[f * pl.hw + i]);
      }
      if (dp.empty()) {
        ++rep.tcc_skipped;
        continue;
      }
      bool equal = true;
      for (std::size_t i = 0; i < dp.size() && equal; ++i) equal = dp[i] == dg[i];
      if (equal) {
        acc += 1.0;
        ++used;
        continue;
      }
      const double n = double(dp.size());
      const double mp = std::accumulate(dp.begin(), dp.end(), 0.0) / n;
      const double mg = std::accumulate(dg.begin(), dg.end(), 0.0) / n;
      double cov = 0.0, vp = 0.0, vg = 0.0;
      for (std::size_t i = 0; i < dp.size(); ++i) {
        cov += (dp[i] - mp) * (dg[i] - mg);
        vp += (dp[i] - mp) * (dp[i] - mp);
        vg += (dg[i] - mg) * (dg[i] - mg);
      }
      if (vp == 0.0 || vg == 0.0) {
        ++rep.tcc_skipped;
        continue;
      }
      acc += cov / std::sqrt(vp * vg);
      ++used;
    }
    if (used > 0) rep.tcc = acc / double(used);
  }

  if (data.flows.empty()) return rep;

  // Flow-warped stability metrics. The prediction is min-max normalized over
  // the sequence for the wobble measure so its scale cannot matter.
  double nmin = 0.0, nmax = 0.0;
  {
    bool first = true;
    for (std::size_t i = 0; i < aligned.size(); ++i) {
      if (valid[i] == 0.0) continue;
      if (first || aligned[i] < nmin) nmin = first ? aligned[i] : std::min(nmin, aligned[i]);
      if (first || aligned[i] > nmax) nmax = first ? aligned[i] : std::max(nmax, aligned[i]);
      first = false;
    }
  }
  const double nrange = nmax - nmin;
  auto normalize = [&](double x) { return nrange > 0.0 ? (x - nmin) / nrange : 0.0; };

  double opw_acc = 0.0, tmc_acc = 0.0;
  std::size_t tc_hits = 0, n_warp = 0;
  for (std::size_t f = 0; f + 1 < pl.t; ++f) {
    const FlowField& flow = data.flows[f];
    std::vector<double> next_p(aligned.begin() + (f + 1) * pl.hw,
                               aligned.begin() + (f + 2) * pl.hw);
    std::vector<double> next_g(gt.begin() + (f + 1) * pl.hw, gt.begin() + (f + 2) * pl.hw);
    std::vector<double> next_v(valid.begin() + (f + 1) * pl.hw, valid.begin() + (f + 2) * pl.hw);
    WarpResult wp = warp_with_flow(next_p, flow);
    WarpResult wg = warp_with_flow(next_g, flow);
    WarpResult wv = warp_with_flow(next_v, flow);
    for (std::size_t i = 0; i < pl.hw; ++i) {
      if (!wp.valid[i] || valid[f * pl.hw + i] == 0.0 || wv.value[i] < 0.999) continue;
      ++n_warp;
      const double a = aligned[f * pl.hw + i];
      const double g = gt[f * pl.hw + i];
      opw_acc += std::abs(normalize(wp.value[i]) - normalize(a));
      const double dpred = std::abs(wp.value[i] - a);
      const double dgt = std::abs(wg.value[i] - g);
      if (a + opt.eps > 0.0 && dpred / (a + opt.eps) < opt.tc_threshold) ++tc_hits;
      tmc_acc += std::min(std::max((dpred + opt.eps) / (dgt + opt.eps), 0.0), 2.0);
    }
  }
  rep.warp_px = n_warp;
  if (n_warp > 0) {
    rep.opw = opw_acc / double(n_warp);
    rep.tc = double(tc_hits) / double(n_warp);
    rep.tmc = tmc_acc / double(n_warp);
  }
  return rep;
}

EvalReport average_reports(const std::vector<EvalReport>& reports) {
  EvalReport avg;
  if (reports.empty()) return avg;
  for (const auto& r : reports) {
    avg.absrel += r.absrel;
    avg.delta1 += r.delta1;
    avg.tgm += r.tgm;
    avg.opw += r.opw;
    avg.tc += r.tc;
    avg.tcc += r.tcc;
    avg.tmc += r.tmc;
    avg.valid_px += r.valid_px;
    avg.warp_px += r.warp_px;
    avg.tcc_skipped += r.tcc_skipped;
    avg.tgm_empty_pairs += r.tgm_empty_pairs;
  }
  const double n = double(reports.size());
  avg.absrel /= n;
  avg.delta1 /= n;
  avg.tgm /= n;
  avg.opw /= n;
  avg.tc /= n;
  avg.tcc /= n;
  avg.tmc /= n;
  return avg;
}

std::vector<double> mean_ranks(const std::vector<MetricColumn>& columns, TieMode mode) {
  if (columns.empty()) throw ConfigError("mean_ranks: no columns");
  const std::size_t m = columns.front().values.size();
  if (m == 0) throw ConfigError("mean_ranks: no methods");
  std::vector<double> acc(m, 0.0);

  for (const auto& col : columns) {
    if (col.values.size() != m) {
      throw ConfigError("mean_ranks: column '" + col.name + "' has " +
                        std::to_string(col.values.size()) + " entries, expected " +
                        std::to_string(m));
    }
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    if (mode == TieMode::stable) {
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return col.values[a] < col.values[b];
      });
      for (std::size_t pos = 0; pos < m; ++pos) {
        const double asc = double(pos + 1);
        acc[idx[pos]] += col.higher_better ? double(m) + 1.0 - asc : asc;
      }
    } else {
      // Sort best-first, then give tied runs the mean of their positions.
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return col.higher_better ? col.values[a] > col.values[b] : col.values[a] < col.values[b];
      });
      std::size_t pos = 0;
      while (pos < m) {
        std::size_t end = pos + 1;
        while (end < m && col.values[idx[end]] == col.values[idx[pos]]) ++end;
        const double shared = (double(pos + 1) + double(end)) / 2.0;
        for (std::size_t k = pos; k < end; ++k) acc[idx[k]] += shared;
        pos = end;
      }
    }
  }
  for (double& a : acc) a /= double(columns.size());
  return acc;
}

double truncate1(double x) { return std::trunc(x * 10.0) / 10.0; }

}  // namespace sdpt
