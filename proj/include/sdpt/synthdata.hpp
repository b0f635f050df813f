#ifndef SDPT_SYNTHDATA_HPP
#define SDPT_SYNTHDATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "sdpt/flow.hpp"
#include "sdpt/tensor.hpp"

namespace sdpt {

// One planar element of a procedural scene. Layers translate with integer
// per-frame velocities, so matching pixels across frames land on exact grid
// positions and the rendered labels (depth, flow) are exact, not resampled.
struct Layer {
  bool full = false;  // covers the whole frame (background)
  double x0 = 0.0, y0 = 0.0;  // box extent at t = 0, half-open
  double x1 = 0.0, y1 = 0.0;
  long long vx = 0, vy = 0;  // pixels per frame
  double inv_depth = 1.0;    // base inverse depth; larger = nearer
  double ramp_x = 0.0, ramp_y = 0.0;  // world-anchored linear depth term
  double depth_noise = 0.0;           // lattice-noise amplitude added to depth
  double tex_freq = 0.13;
  std::uint64_t tex_seed = 0;
  double gain_r = 1.0, gain_g = 1.0, gain_b = 1.0;
};

struct SceneSpec {
  std::string name;
  std::size_t num_frames = 24;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<Layer> layers;       // back to front; front-most covering wins
  std::vector<double> brightness;  // per-frame additive offset; may be empty
};

// Rendered clip with exact inverse-depth, validity and forward-flow labels.
struct LabeledClip {
  std::string name;
  Tensor frames;  // (t, 3, h, w), colors in [0, 1]
  Tensor depth;   // (t, 1, h, w), positive inverse depth
  Tensor valid;   // (t, 1, h, w), depth validity in {0, 1}
  std::vector<FlowField> flows;  // t - 1 forward flows
};

// Smooth [0, 1] lattice noise; equal arguments give bitwise-equal values.
double value_noise(double x, double y, std::uint64_t seed);

LabeledClip render_clip(const SceneSpec& spec);

// Eight fixed scenes (static, slow/fast pan, brightness flicker, occlusion,
// depth-ramp pan, parallax, crossing movers) textured from `seed`.
std::vector<SceneSpec> suite_specs(std::uint64_t seed);
std::vector<LabeledClip> make_suite(std::uint64_t seed);

// Copies frames [start, start + len) into a standalone clip.
LabeledClip slice_clip(const LabeledClip& clip, std::size_t start, std::size_t len);

}  // namespace sdpt

#endif
