#ifndef SDPT_ENCODER_HPP
#define SDPT_ENCODER_HPP

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "sdpt/attention.hpp"
#include "sdpt/rng.hpp"
#include "sdpt/tensor.hpp"

namespace sdpt {

struct EncoderConfig {
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t depth = 8;
  std::size_t num_heads = 4;
  // Blocks (0-based) whose outputs are exposed as feature taps.
  std::vector<std::size_t> tap_indices = {1, 3, 5, 7};

  void validate() const;
};

struct EncoderBlockParams {
  Tensor ln1_g, ln1_b;
  AttentionParams attn;
  Tensor ln2_g, ln2_b;
  Tensor ffn_w1, ffn_b1;  // (C, 4C), (4C,)
  Tensor ffn_w2, ffn_b2;  // (4C, C), (C,)
};

struct EncoderParams {
  Tensor patch_w, patch_b;  // (E, C_in, p, p), (E,)
  Tensor pos;               // (token_h * token_w, E), learned
  std::vector<EncoderBlockParams> blocks;
  std::size_t token_h = 0, token_w = 0;

  static EncoderParams init(const EncoderConfig& cfg, std::size_t in_channels, std::size_t h,
                            std::size_t w, Rng& rng);
  void visit(const std::string& prefix,
             const std::function<void(const std::string&, Tensor&)>& fn);
};

struct FeatureVolume {
  // One entry per tap, each (N, embed_dim, token_h, token_w).
  std::vector<Tensor> taps;
  std::size_t token_h = 0, token_w = 0;
};

// Patchify -> add positional embedding -> pre-norm transformer blocks, frames
// processed independently (pure spatial self-attention within each frame).
// frames: (N, C_in, H, W) with values expected in [0, 1].
FeatureVolume encode(const Tensor& frames, const EncoderParams& params, const EncoderConfig& cfg);

}  // namespace sdpt

#endif
