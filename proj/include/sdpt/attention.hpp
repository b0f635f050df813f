#ifndef SDPT_ATTENTION_HPP
#define SDPT_ATTENTION_HPP

#include <cstddef>

#include "sdpt/ops.hpp"
#include "sdpt/rng.hpp"
#include "sdpt/tensor.hpp"

namespace sdpt {

struct AttentionConfig {
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  // Adds a sinusoidal encoding of the token's position along the sequence
  // axis to the attention inputs before projection.
  bool temporal_pos_enc = false;

  void validate() const;
  std::size_t head_dim() const { return embed_dim / num_heads; }
};

struct AttentionParams {
  Tensor wq, bq;  // (C, C), (C,)
  Tensor wk, bk;
  Tensor wv, bv;
  Tensor wo, bo;

  static AttentionParams init(std::size_t embed_dim, Rng& rng);
  // Identity projections with zero bias; useful for closed-form checks.
  static AttentionParams identity(std::size_t embed_dim);
};

// Scaled dot-product attention with per-head softmax over the key axis:
// softmax(Q K^T / sqrt(d_k)) V, followed by the output projection.
// q_src: (B, Tq, C), kv_src: (B, Tkv, C) -> (B, Tq, C).
Tensor multihead_attention(const Tensor& q_src, const Tensor& kv_src,
                           const AttentionParams& params, const AttentionConfig& cfg);

// (T, C, H, W) -> (H*W, T, C): one batch row per spatial patch so attention
// mixes information across time only.
Tensor to_temporal_tokens(const Tensor& frames);

// Exact inverse of to_temporal_tokens for the given spatial grid.
Tensor from_temporal_tokens(const Tensor& tokens, std::size_t h, std::size_t w);

}  // namespace sdpt

#endif
