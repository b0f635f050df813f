#ifndef SDPT_FLOW_HPP
#define SDPT_FLOW_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace sdpt {

// Dense forward optical flow from frame i to frame i+1 with a per-pixel
// validity flag (occluded or out-of-view targets are invalid).
struct FlowField {
  std::size_t h = 0, w = 0;
  std::vector<double> u, v;           // x and y displacement, row-major
  std::vector<std::uint8_t> valid;

  static FlowField zeros(std::size_t h, std::size_t w) {
    FlowField f;
    f.h = h;
    f.w = w;
    f.u.assign(h * w, 0.0);
    f.v.assign(h * w, 0.0);
    f.valid.assign(h * w, 1);
    return f;
  }
};

// Bilinear sample with clamped taps; integer coordinates reproduce the
// stored value exactly.
inline double bilinear_sample(const std::vector<double>& plane, std::size_t h, std::size_t w,
                              double sx, double sy) {
  const double cx = std::min(std::max(sx, 0.0), double(w - 1));
  const double cy = std::min(std::max(sy, 0.0), double(h - 1));
  const std::size_t x0 = std::size_t(cx);
  const std::size_t y0 = std::size_t(cy);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const double fx = cx - double(x0);
  const double fy = cy - double(y0);
  const double top = (1.0 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
  const double bot = (1.0 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
  return (1.0 - fy) * top + fy * bot;
}

struct WarpResult {
  std::vector<double> value;
  std::vector<std::uint8_t> valid;
};

// Pulls the next frame back onto the current grid: out(y, x) =
// next(y + v, x + u). Invalid where the flow is invalid or points outside.
inline WarpResult warp_with_flow(const std::vector<double>& next_plane, const FlowField& flow) {
  WarpResult r;
  r.value.assign(flow.h * flow.w, 0.0);
  r.valid.assign(flow.h * flow.w, 0);
  for (std::size_t y = 0; y < flow.h; ++y) {
    for (std::size_t x = 0; x < flow.w; ++x) {
      const std::size_t i = y * flow.w + x;
      if (!flow.valid[i]) continue;
      const double sx = double(x) + flow.u[i];
      const double sy = double(y) + flow.v[i];
      if (sx < 0.0 || sx > double(flow.w - 1) || sy < 0.0 || sy > double(flow.h - 1)) continue;
      r.value[i] = bilinear_sample(next_plane, flow.h, flow.w, sx, sy);
      r.valid[i] = 1;
    }
  }
  return r;
}

}  // namespace sdpt

#endif
