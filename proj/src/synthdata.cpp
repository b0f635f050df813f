#include "sdpt/synthdata.hpp"

#include <cmath>
#include <utility>

#include "sdpt/errors.hpp"
#include "sdpt/ops.hpp"
#include "sdpt/rng.hpp"

namespace sdpt {

namespace {

double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  std::uint64_t h = seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(ix) +
                    0xd1b54a32d192ed03ULL * static_cast<std::uint64_t>(iy);
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double fade(double u) { return u * u * (3.0 - 2.0 * u); }

bool covers(const Layer& l, std::size_t x, std::size_t y, std::size_t t) {
  if (l.full) return true;
  const double dx = static_cast<double>(l.vx) * static_cast<double>(t);
  const double dy = static_cast<double>(l.vy) * static_cast<double>(t);
  const double px = static_cast<double>(x), py = static_cast<double>(y);
  return px >= l.x0 + dx && px < l.x1 + dx && py >= l.y0 + dy && py < l.y1 + dy;
}

std::size_t owner_at(const SceneSpec& s, std::size_t x, std::size_t y, std::size_t t) {
  for (std::size_t li = s.layers.size(); li-- > 0;) {
    if (covers(s.layers[li], x, y, t)) return li;
  }
  throw ConfigError("render_clip: no layer covers pixel (scene needs a full background)");
}

double layer_depth(const Layer& l, double wx, double wy) {
  double d = l.inv_depth + l.ramp_x * wx + l.ramp_y * wy;
  if (l.depth_noise != 0.0) {
    d += l.depth_noise *
         value_noise(wx * l.tex_freq, wy * l.tex_freq, l.tex_seed ^ 0x6a09e667f3bcc909ULL);
  }
  return d;
}

}  // namespace

double value_noise(double x, double y, std::uint64_t seed) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double ux = fade(x - fx), uy = fade(y - fy);
  const double v00 = lattice(ix, iy, seed), v10 = lattice(ix + 1, iy, seed);
  const double v01 = lattice(ix, iy + 1, seed), v11 = lattice(ix + 1, iy + 1, seed);
  const double top = v00 + (v10 - v00) * ux;
  const double bot = v01 + (v11 - v01) * ux;
  return top + (bot - top) * uy;
}

LabeledClip render_clip(const SceneSpec& spec) {
  const std::size_t t_n = spec.num_frames, h = spec.height, w = spec.width;
  if (t_n == 0 || h == 0 || w == 0) throw ConfigError("render_clip: empty scene extent");
  if (spec.layers.empty()) throw ConfigError("render_clip: scene has no layers");
  if (!spec.brightness.empty() && spec.brightness.size() != t_n) {
    throw ConfigError("render_clip: brightness must list one offset per frame");
  }

  std::vector<double> frames(t_n * 3 * h * w);
  std::vector<double> depth(t_n * h * w);
  std::vector<double> valid(t_n * h * w, 1.0);
  std::vector<std::size_t> owners(t_n * h * w);

  for (std::size_t t = 0; t < t_n; ++t) {
    const double jitter = spec.brightness.empty() ? 0.0 : spec.brightness[t];
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t li = owner_at(spec, x, y, t);
        const Layer& l = spec.layers[li];
        owners[(t * h + y) * w + x] = li;
        // World coordinates: the same scene point keeps the same (wx, wy)
        // in every frame, so its color and depth are bitwise stable.
        const double wx = static_cast<double>(x) -
                          static_cast<double>(l.vx) * static_cast<double>(t);
        const double wy = static_cast<double>(y) -
                          static_cast<double>(l.vy) * static_cast<double>(t);
        depth[(t * h + y) * w + x] = layer_depth(l, wx, wy);
        const double tex = value_noise(wx * l.tex_freq, wy * l.tex_freq, l.tex_seed);
        const double base = 0.2 + 0.55 * tex;
        frames[((t * 3 + 0) * h + y) * w + x] = l.gain_r * base + jitter;
        frames[((t * 3 + 1) * h + y) * w + x] = l.gain_g * base + jitter;
        frames[((t * 3 + 2) * h + y) * w + x] = l.gain_b * base + jitter;
      }
    }
  }

  std::vector<FlowField> flows;
  for (std::size_t t = 0; t + 1 < t_n; ++t) {
    FlowField f = FlowField::zeros(h, w);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = y * w + x;
        const std::size_t li = owners[(t * h + y) * w + x];
        const Layer& l = spec.layers[li];
        f.u[i] = static_cast<double>(l.vx);
        f.v[i] = static_cast<double>(l.vy);
        const long long tx = static_cast<long long>(x) + l.vx;
        const long long ty = static_cast<long long>(y) + l.vy;
        const bool inside = tx >= 0 && tx < static_cast<long long>(w) && ty >= 0 &&
                            ty < static_cast<long long>(h);
        // A pixel stays valid only if its scene point is still front-most in
        // the next frame; otherwise something nearer occluded it.
        const bool same_owner =
            inside && owners[((t + 1) * h + static_cast<std::size_t>(ty)) * w +
                             static_cast<std::size_t>(tx)] == li;
        f.valid[i] = same_owner ? 1 : 0;
      }
    }
    flows.push_back(std::move(f));
  }

  LabeledClip clip;
  clip.name = spec.name;
  clip.frames = Tensor::from_data({t_n, 3, h, w}, std::move(frames));
  clip.depth = Tensor::from_data({t_n, 1, h, w}, std::move(depth));
  clip.valid = Tensor::from_data({t_n, 1, h, w}, std::move(valid));
  clip.flows = std::move(flows);
  return clip;
}

std::vector<SceneSpec> suite_specs(std::uint64_t seed) {
  Rng rng(seed);
  auto textured = [&rng](Layer l) {
    l.tex_seed = rng.next_u64();
    l.gain_r = rng.uniform(0.55, 0.95);
    l.gain_g = rng.uniform(0.55, 0.95);
    l.gain_b = rng.uniform(0.55, 0.95);
    return l;
  };
  auto background = [&textured](long long vx, long long vy, double inv_depth, double ramp_x,
                                double ramp_y, double noise) {
    Layer l;
    l.full = true;
    l.vx = vx;
    l.vy = vy;
    l.inv_depth = inv_depth;
    l.ramp_x = ramp_x;
    l.ramp_y = ramp_y;
    l.depth_noise = noise;
    return textured(l);
  };
  auto box = [&textured](double x0, double y0, double x1, double y1, long long vx, long long vy,
                         double inv_depth) {
    Layer l;
    l.x0 = x0;
    l.y0 = y0;
    l.x1 = x1;
    l.y1 = y1;
    l.vx = vx;
    l.vy = vy;
    l.inv_depth = inv_depth;
    return textured(l);
  };

  std::vector<SceneSpec> specs;

  SceneSpec s;
  s.name = "static";
  s.layers = {background(0, 0, 1.0, 0.02, 0.03, 0.0)};
  specs.push_back(s);

  s = SceneSpec{};
  s.name = "slow_pan";
  s.layers = {background(1, 0, 1.2, 0.03, 0.01, 0.0)};
  specs.push_back(s);

  s = SceneSpec{};
  s.name = "fast_pan";
  s.layers = {background(4, 0, 1.5, 0.0, 0.0, 0.8)};
  s.layers[0].tex_freq = 0.11;
  specs.push_back(s);

  s = SceneSpec{};
  s.name = "flicker";
  s.layers = {background(0, 0, 1.0, 0.02, 0.02, 0.0)};
  s.brightness.assign(s.num_frames, 0.0);
  for (std::size_t t = 1; t < s.num_frames; t += 2) s.brightness[t] = 0.18;
  specs.push_back(s);

  s = SceneSpec{};
  s.name = "occlusion";
  s.layers = {background(0, 0, 0.8, 0.01, 0.01, 0.0), box(2, 12, 10, 20, 2, 0, 2.5)};
  specs.push_back(s);

  s = SceneSpec{};
  s.name = "ramp_pan";
  s.layers = {background(1, 1, 2.0, 0.02, 0.015, 0.0)};
  specs.push_back(s);

  s = SceneSpec{};
  s.name = "parallax";
  s.layers = {background(1, 0, 0.9, 0.0, 0.0, 0.5),
              box(-1e9, 10, 1e9, 22, 3, 0, 2.2)};
  s.layers[0].tex_freq = 0.09;
  s.layers[1].depth_noise = 0.4;
  specs.push_back(s);

  s = SceneSpec{};
  s.name = "crossing";
  s.layers = {background(0, 0, 0.7, 0.012, 0.008, 0.0), box(11, 0, 19, 8, 0, 2, 1.6),
              box(0, 12, 8, 20, 2, 0, 2.8)};
  specs.push_back(s);

  return specs;
}

std::vector<LabeledClip> make_suite(std::uint64_t seed) {
  std::vector<LabeledClip> clips;
  for (const SceneSpec& spec : suite_specs(seed)) clips.push_back(render_clip(spec));
  return clips;
}

LabeledClip slice_clip(const LabeledClip& clip, std::size_t start, std::size_t len) {
  const std::size_t total = clip.frames.shape()[0];
  if (len == 0) throw ConfigError("slice_clip: empty slice");
  if (start + len > total) throw ShapeError("slice_clip: slice exceeds clip length");
  LabeledClip out;
  out.name = clip.name;
  out.frames = slice(clip.frames, 0, start, len);
  out.depth = slice(clip.depth, 0, start, len);
  out.valid = slice(clip.valid, 0, start, len);
  out.flows.assign(clip.flows.begin() + static_cast<std::ptrdiff_t>(start),
                   clip.flows.begin() + static_cast<std::ptrdiff_t>(start + len - 1));
  return out;
}

}  // namespace sdpt
