#ifndef SDPT_HEAD_HPP
#define SDPT_HEAD_HPP

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "sdpt/attention.hpp"
#include "sdpt/rng.hpp"
#include "sdpt/tensor.hpp"

namespace sdpt {

struct HeadConfig {
  // Per-tap channel widths after reassembly, shallow to deep.
  std::vector<std::size_t> feature_dims = {24, 32, 48, 64};
  std::size_t fusion_dim = 32;
  // Tap sites (indices into feature_dims) that get temporal layers.
  std::vector<std::size_t> temporal_sites = {2, 3};
  std::size_t temporal_layers_per_site = 2;
  std::size_t num_heads = 4;
  // Start temporal layers as exact identities via a zero output projection.
  bool zero_init_temporal = true;
  // Also let current-clip frames attend to each other (appended to the
  // keyframe tokens). Off by default: with it off the per-frame outputs do
  // not depend on which other frames share the clip.
  bool self_attention = false;

  void validate() const;
  bool is_temporal_site(std::size_t site) const;
};

// Spatial scale of each reassembled stream relative to the token grid,
// shallow to deep: {4x, 2x, 1x, 0.5x}.
double reassemble_scale(std::size_t site, std::size_t num_sites);

struct ReassembleParams {
  Tensor w, b;  // 1x1 conv, embed_dim -> feature_dims[site]
};

struct TemporalLayerParams {
  Tensor ln1_g, ln1_b;  // shared pre-norm for query and key/value tokens
  AttentionParams attn;
  Tensor ln2_g, ln2_b;
  Tensor ffn_w1, ffn_b1;
  Tensor ffn_w2, ffn_b2;
  Tensor zero_w, zero_b;  // output projection, zero-initialized by default
};

struct ResidualConvUnit {
  Tensor w1, b1, w2, b2;  // two 3x3 convs, x + conv(relu(conv(relu(x))))
};

struct FusionParams {
  std::vector<Tensor> proj_w, proj_b;       // per site: 3x3 conv feature_dims[k] -> fusion_dim
  std::vector<ResidualConvUnit> pre;        // per site
  std::vector<ResidualConvUnit> post;       // per merge (sites 0..n-2)
};

struct OutputHeadParams {
  Tensor c1_w, c1_b;  // 3x3, fusion -> fusion/2
  Tensor c2_w, c2_b;  // 3x3 after upsample, fusion/2 -> fusion/2
  Tensor c3_w, c3_b;  // 1x1, fusion/2 -> 1
};

struct HeadParams {
  std::vector<ReassembleParams> reassemble;                // per site
  std::vector<std::vector<TemporalLayerParams>> temporal;  // [temporal site][layer]
  FusionParams fusion;
  OutputHeadParams out;

  static HeadParams init(const HeadConfig& cfg, std::size_t embed_dim, Rng& rng);
  void visit(const std::string& prefix,
             const std::function<void(const std::string&, Tensor&)>& fn);
};

// 1x1 projection + bilinear rescale of one tap: (n, e, th, tw) ->
// (n, feature_dims[site], th*scale, tw*scale).
Tensor reassemble_site(const Tensor& tap, std::size_t site, const HeadConfig& cfg,
                       const ReassembleParams& params);

// One cross-attention layer over temporal tokens. current: (t, d, h, w);
// keyframes: (m, d, h, w) on the same grid. Residual throughout; with a
// zero output projection this is an exact identity on `current`.
Tensor temporal_layer(const Tensor& current, const Tensor& keyframes,
                      const TemporalLayerParams& params, const HeadConfig& cfg);

// Coarse-to-fine fusion across the reassembled streams (deepest first, each
// step upsamples 2x and adds the next shallower stream). Returns
// (n, fusion_dim, h0, w0) at the shallowest stream's resolution.
Tensor fuse(const std::vector<Tensor>& streams, const FusionParams& params,
            const HeadConfig& cfg);

// conv -> bilinear resize to (out_h, out_w) -> conv -> relu -> 1x1 conv ->
// softplus; returns strictly positive (n, 1, out_h, out_w) inverse depth.
Tensor output_head(const Tensor& fused, const OutputHeadParams& params, std::size_t out_h,
                   std::size_t out_w);

}  // namespace sdpt

#endif
