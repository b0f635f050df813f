#include "sdpt/scheduler.hpp"

#include <algorithm>
#include <cmath>

#include "sdpt/errors.hpp"
#include "sdpt/ops.hpp"

namespace sdpt {

std::string plan_kind_name(PlanKind k) {
  switch (k) {
    case PlanKind::batched: return "batched";
    case PlanKind::overlap: return "overlap";
    case PlanKind::strided: return "strided";
    case PlanKind::strided_kf: return "strided_kf";
  }
  throw ConfigError("unknown plan kind");
}

PlanKind plan_kind_from_name(const std::string& name) {
  if (name == "batched") return PlanKind::batched;
  if (name == "overlap") return PlanKind::overlap;
  if (name == "strided") return PlanKind::strided;
  if (name == "strided_kf") return PlanKind::strided_kf;
  throw ConfigError("unknown plan kind '" + name + "'");
}

namespace {

void check_plan_args(std::size_t n, std::size_t window) {
  if (n == 0) throw ConfigError("plan: clip has no frames");
  if (window == 0) throw ConfigError("plan: window must be positive");
}

}  // namespace

InferencePlan plan_batched(std::size_t n, std::size_t window) {
  check_plan_args(n, window);
  InferencePlan p;
  p.kind = PlanKind::batched;
  p.num_frames = n;
  p.window = window;
  for (std::size_t start = 0; start < n; start += window) {
    Snippet s;
    for (std::size_t f = start; f < std::min(start + window, n); ++f) s.frames.push_back(f);
    p.snippets.push_back(std::move(s));
  }
  return p;
}

InferencePlan plan_overlap(std::size_t n, std::size_t window, std::size_t overlap) {
  check_plan_args(n, window);
  if (overlap >= window) {
    throw ConfigError("plan: overlap " + std::to_string(overlap) +
                      " must be smaller than the window " + std::to_string(window));
  }
  InferencePlan p;
  p.kind = PlanKind::overlap;
  p.num_frames = n;
  p.window = window;
  p.overlap = overlap;
  std::size_t covered = 0;
  while (covered < n) {
    const std::size_t start = covered == 0 ? 0 : covered - overlap;
    Snippet s;
    for (std::size_t f = start; f < std::min(start + window, n); ++f) s.frames.push_back(f);
    covered = s.frames.back() + 1;
    p.snippets.push_back(std::move(s));
  }
  return p;
}

InferencePlan plan_strided(std::size_t n, std::size_t snippet_len) {
  check_plan_args(n, snippet_len);
  InferencePlan p;
  p.kind = PlanKind::strided;
  p.num_frames = n;
  p.window = snippet_len;
  if (n <= snippet_len) {
    Snippet s;
    for (std::size_t f = 0; f < n; ++f) s.frames.push_back(f);
    p.stride = 1;
    p.snippets.push_back(std::move(s));
    return p;
  }
  const std::size_t stride = n / snippet_len;
  p.stride = stride;
  p.snippets.resize(stride);
  for (std::size_t i = 0; i < stride; ++i) {
    for (std::size_t j = 0; j < snippet_len; ++j) p.snippets[i].frames.push_back(i + j * stride);
  }
  // Leftover frames go round-robin onto the tail snippets so no snippet
  // grows by more than one until every one has.
  for (std::size_t f = stride * snippet_len, r = 0; f < n; ++f, ++r) {
    p.snippets[stride - 1 - (r % stride)].frames.push_back(f);
  }
  return p;
}

std::vector<std::size_t> pick_keyframes(std::size_t n, std::size_t m, KeyframeMode mode) {
  if (n == 0) throw ConfigError("keyframes: clip has no frames");
  if (m == 0) throw ConfigError("keyframes: need at least one");
  std::vector<std::size_t> out;
  if (mode == KeyframeMode::uniform) {
    if (m == 1) {
      out.push_back(std::size_t(std::llround(double(n - 1) / 2.0)));
    } else {
      for (std::size_t j = 0; j < m; ++j) {
        out.push_back(std::size_t(std::llround(double(j) * double(n - 1) / double(m - 1))));
      }
    }
  } else {
    out.push_back(0);
    if (m >= 2) {
      const std::size_t interior = m - 2;
      for (std::size_t j = 0; j < interior; ++j) {
        out.push_back(std::size_t((double(j) + 0.5) * double(n) / double(interior)));
      }
      out.push_back(n - 1);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  for (std::size_t& k : out) k = std::min(k, n - 1);
  return out;
}

InferencePlan plan_strided_kf(std::size_t n, std::size_t snippet_len, std::size_t num_keyframes,
                              KeyframeMode mode) {
  InferencePlan p = plan_strided(n, snippet_len);
  p.kind = PlanKind::strided_kf;
  p.keyframes = pick_keyframes(n, num_keyframes, mode);
  return p;
}

PlanCost plan_cost(const InferencePlan& plan) {
  PlanCost c;
  std::vector<std::size_t> seen(plan.num_frames, 0);
  for (const auto& s : plan.snippets) {
    for (std::size_t f : s.frames) {
      ++c.frame_encodes;
      ++seen.at(f);
    }
  }
  for (std::size_t cnt : seen) {
    if (cnt > 1) c.duplicated += cnt - 1;
  }
  c.keyframe_encodes = plan.keyframes.size();
  c.frame_encodes += c.keyframe_encodes;
  c.relative = plan.num_frames ? double(c.frame_encodes) / double(plan.num_frames) : 0.0;
  return c;
}

std::vector<double> stitch_overlap(const InferencePlan& plan,
                                   const std::vector<std::vector<double>>& window_values,
                                   std::size_t plane) {
  if (window_values.size() != plan.snippets.size()) {
    throw ShapeError("stitch: expected " + std::to_string(plan.snippets.size()) +
                     " windows, got " + std::to_string(window_values.size()));
  }
  std::vector<double> out(plan.num_frames * plane, 0.0);
  for (std::size_t wi = 0; wi < plan.snippets.size(); ++wi) {
    const auto& frames = plan.snippets[wi].frames;
    std::vector<double> vals = window_values[wi];
    if (vals.size() != frames.size() * plane) {
      throw ShapeError("stitch: window " + std::to_string(wi) + " carries " +
                       std::to_string(vals.size()) + " values, expected " +
                       std::to_string(frames.size() * plane));
    }
    const std::size_t ov = wi == 0 ? 0 : std::min(plan.overlap, frames.size());
    if (ov > 0) {
      // Affine-align this window to the already-stitched overlap frames.
      double sp = 0.0, sg = 0.0, cnt = double(ov * plane);
      for (std::size_t r = 0; r < ov; ++r) {
        for (std::size_t i = 0; i < plane; ++i) {
          sp += vals[r * plane + i];
          sg += out[frames[r] * plane + i];
        }
      }
      const double mp = sp / cnt, mg = sg / cnt;
      double cov = 0.0, var = 0.0;
      for (std::size_t r = 0; r < ov; ++r) {
        for (std::size_t i = 0; i < plane; ++i) {
          const double dp = vals[r * plane + i] - mp;
          cov += dp * (out[frames[r] * plane + i] - mg);
          var += dp * dp;
        }
      }
      const double s = var > 0.0 ? cov / var : 1.0;
      const double t = mg - s * mp;
      for (double& v : vals) v = s * v + t;
    }
    for (std::size_t r = 0; r < frames.size(); ++r) {
      double* dst = out.data() + frames[r] * plane;
      const double* src = vals.data() + r * plane;
      if (r < ov) {
        // Cross-fade towards the new window deeper into the overlap.
        const double w = double(r + 1) / double(ov + 1);
        for (std::size_t i = 0; i < plane; ++i) dst[i] = (1.0 - w) * dst[i] + w * src[i];
      } else {
        std::copy(src, src + plane, dst);
      }
    }
  }
  return out;
}

Tensor execute_plan(Model& model, const Tensor& video, const InferencePlan& plan) {
  if (video.ndim() != 4 || video.shape()[0] != plan.num_frames) {
    throw ShapeError("execute: video " + shape_str(video.shape()) + " does not match plan over " +
                     std::to_string(plan.num_frames) + " frames");
  }
  NoGradGuard ng;
  const std::size_t plane = model.config().input_h * model.config().input_w;

  if (plan.kind == PlanKind::overlap) {
    std::vector<std::vector<double>> window_values;
    for (const auto& s : plan.snippets) {
      Tensor d = model.forward_video_self(index_select0(video, s.frames));
      window_values.push_back(d.values());
    }
    return Tensor::from_data({plan.num_frames, 1, model.config().input_h,
                              model.config().input_w},
                             stitch_overlap(plan, window_values, plane));
  }

  KeyframeCache cache;
  if (plan.kind == PlanKind::strided_kf) {
    cache = model.cache_keyframes(video, plan.keyframes);
  }
  std::vector<double> out(plan.num_frames * plane, 0.0);
  for (const auto& s : plan.snippets) {
    Tensor frames = index_select0(video, s.frames);
    Tensor d = plan.kind == PlanKind::strided_kf ? model.forward_video_cached(frames, cache)
                                                 : model.forward_video_self(frames);
    const auto& dv = d.values();
    for (std::size_t r = 0; r < s.frames.size(); ++r) {
      std::copy(dv.begin() + r * plane, dv.begin() + (r + 1) * plane,
                out.begin() + s.frames[r] * plane);
    }
  }
  return Tensor::from_data({plan.num_frames, 1, model.config().input_h, model.config().input_w},
                           out);
}

}  // namespace sdpt
