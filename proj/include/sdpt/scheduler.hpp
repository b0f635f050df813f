#ifndef SDPT_SCHEDULER_HPP
#define SDPT_SCHEDULER_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "sdpt/model.hpp"
#include "sdpt/tensor.hpp"

namespace sdpt {

enum class PlanKind { batched, overlap, strided, strided_kf };

std::string plan_kind_name(PlanKind k);
PlanKind plan_kind_from_name(const std::string& name);

enum class KeyframeMode { uniform, first_last_uniform };

struct Snippet {
  std::vector<std::size_t> frames;  // original clip indices, processing order
};

struct InferencePlan {
  PlanKind kind = PlanKind::batched;
  std::size_t num_frames = 0;
  std::size_t window = 0;   // chunk length (batched/overlap) or snippet length
  std::size_t overlap = 0;  // shared frames between consecutive windows
  std::size_t stride = 0;   // temporal stride of strided snippets
  std::vector<Snippet> snippets;
  std::vector<std::size_t> keyframes;  // strided_kf only
};

struct PlanCost {
  std::size_t frame_encodes = 0;     // total encoder passes over frames
  std::size_t keyframe_encodes = 0;  // encoder passes attributable to keyframes
  std::size_t duplicated = 0;        // frames encoded more than once
  double relative = 0.0;             // frame_encodes / num_frames
};

// Consecutive chunks of `window` frames; the final chunk may be short.
InferencePlan plan_batched(std::size_t n, std::size_t window);

// Consecutive windows sharing `overlap` frames with their predecessor;
// overlapping frames are later blended after per-window affine alignment.
InferencePlan plan_overlap(std::size_t n, std::size_t window, std::size_t overlap);

// Snippet i holds frames {i, i+s, i+2s, ...} with s = floor(n / len); the
// s*len..n-1 leftovers are appended round-robin starting from the last
// snippet. Covers every frame exactly once.
InferencePlan plan_strided(std::size_t n, std::size_t snippet_len);

// Strided snippets plus a fixed set of globally shared keyframes whose
// features are encoded once and reused by every snippet.
InferencePlan plan_strided_kf(std::size_t n, std::size_t snippet_len, std::size_t num_keyframes,
                              KeyframeMode mode = KeyframeMode::uniform);

std::vector<std::size_t> pick_keyframes(std::size_t n, std::size_t m, KeyframeMode mode);

PlanCost plan_cost(const InferencePlan& plan);

// Reassembles per-window outputs into a full clip. Each window after the
// first is affine-aligned to the already-stitched values over the shared
// frames, then cross-faded across the overlap. window_values[i] holds
// plan.snippets[i].frames.size() * plane values.
std::vector<double> stitch_overlap(const InferencePlan& plan,
                                   const std::vector<std::vector<double>>& window_values,
                                   std::size_t plane);

// Runs the model over the clip per the plan (inference only, no tape) and
// returns (n, 1, h, w) inverse depth in original frame order.
Tensor execute_plan(Model& model, const Tensor& video, const InferencePlan& plan);

}  // namespace sdpt

#endif
