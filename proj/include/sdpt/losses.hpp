#ifndef SDPT_LOSSES_HPP
#define SDPT_LOSSES_HPP

#include <cstddef>
#include <utility>

#include "sdpt/tensor.hpp"

namespace sdpt {

struct LossWeights {
  double ssi = 2.0;
  double gm = 1.0;
  double tgm = 2.5;
  // Fraction of the largest residuals discarded per frame.
  double trim = 0.2;
  std::size_t gm_scales = 4;
  // Pixels whose channel-mean intensity change exceeds this between
  // consecutive frames are excluded from the temporal term.
  double flicker_tau = 0.05;
};

struct TgmStats {
  std::size_t pairs = 0;
  std::size_t empty_pairs = 0;  // pairs whose mask had no valid pixel
  std::size_t valid_px = 0;
};

struct LossBreakdown {
  Tensor ssi, gm, tgm, total;  // scalars
  TgmStats tgm_stats;
};

// Least-squares scale/shift aligning pred to gt over mask==1 pixels:
// argmin_{s,t} sum mask * (s*pred + t - gt)^2. Returns scalar tensors wired
// into the tape, so gradients flow through the alignment itself.
std::pair<Tensor, Tensor> align_lsq(const Tensor& pred, const Tensor& gt, const Tensor& mask);

// Applies align_lsq independently per frame (axis 0). Frames with an empty
// mask pass through unaligned (their pixels are masked out downstream).
Tensor align_per_frame(const Tensor& pred, const Tensor& gt, const Tensor& mask);

// Trimmed mean absolute residual per frame, averaged over frames. The
// floor(trim * n_valid) largest residuals of each frame are discarded; the
// selection is treated as a constant during backprop.
Tensor ssi_trim_from_aligned(const Tensor& aligned, const Tensor& gt, const Tensor& mask,
                             double trim);
Tensor ssi_trim(const Tensor& pred, const Tensor& gt, const Tensor& mask, double trim);

// Multi-scale gradient matching on the residual R = aligned - gt: mean of
// |dR/dx| + |dR/dy| over valid neighbour pairs, summed over dyadically
// downsampled scales, averaged over frames.
Tensor gm_from_aligned(const Tensor& aligned, const Tensor& gt, const Tensor& mask,
                       std::size_t scales);
Tensor gradient_matching(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                         std::size_t scales);

// Pixels considered static between consecutive frames: channel-mean
// |I_{i+1} - I_i| < tau. frames: (t, c, h, w) -> (t-1, 1, h, w) in {0, 1}.
Tensor flicker_mask(const Tensor& frames, double tau);

// Temporal gradient matching: mean over valid pixels of all consecutive
// pairs of |(d_{i+1} - d_i) - (g_{i+1} - g_i)|. pair_mask: (t-1, 1, h, w).
Tensor tgm_from_aligned(const Tensor& aligned, const Tensor& gt, const Tensor& pair_mask,
                        TgmStats* stats = nullptr);
// Aligns once over the whole sequence (shared s, t), then measures the
// temporal term; per-frame alignment would absorb exactly the flicker this
// loss is meant to punish.
Tensor tgm_loss(const Tensor& pred, const Tensor& gt, const Tensor& valid_mask,
                const Tensor& pair_mask, TgmStats* stats = nullptr);

// pred/gt/valid_mask: (t, 1, h, w) inverse depth; frames: (t, c, h, w).
LossBreakdown combined_video_loss(const Tensor& pred, const Tensor& gt, const Tensor& valid_mask,
                                  const Tensor& frames, const LossWeights& w);
// Spatial terms only; every image is aligned and scored independently.
LossBreakdown combined_image_loss(const Tensor& pred, const Tensor& gt, const Tensor& valid_mask,
                                  const LossWeights& w);

}  // namespace sdpt

#endif
