#include "sdpt/encoder.hpp"

#include <cmath>
#include <string>

#include "sdpt/errors.hpp"
#include "sdpt/ops.hpp"

namespace sdpt {

void EncoderConfig::validate() const {
  if (patch_size == 0 || embed_dim == 0 || depth == 0 || num_heads == 0) {
    throw ConfigError("encoder: patch_size, embed_dim, depth, num_heads must be positive");
  }
  if (embed_dim % num_heads != 0) {
    throw ConfigError("encoder: embed_dim " + std::to_string(embed_dim) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (tap_indices.empty()) throw ConfigError("encoder: need at least one tap index");
  for (std::size_t i = 0; i < tap_indices.size(); ++i) {
    if (tap_indices[i] >= depth) {
      throw ConfigError("encoder: tap index " + std::to_string(tap_indices[i]) +
                        " out of range for depth " + std::to_string(depth));
    }
    if (i > 0 && tap_indices[i] <= tap_indices[i - 1]) {
      throw ConfigError("encoder: tap indices must be strictly increasing");
    }
  }
}

namespace {

Tensor glorot(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  return Tensor::uniform(shape, rng, -bound, bound).set_requires_grad(true);
}

Tensor ones_param(const Shape& shape) {
  return Tensor::full(shape, 1.0).set_requires_grad(true);
}

Tensor zeros_param(const Shape& shape) {
  return Tensor::zeros(shape).set_requires_grad(true);
}

}  // namespace

EncoderParams EncoderParams::init(const EncoderConfig& cfg, std::size_t in_channels,
                                  std::size_t h, std::size_t w, Rng& rng) {
  cfg.validate();
  if (h % cfg.patch_size != 0 || w % cfg.patch_size != 0) {
    throw ConfigError("encoder: input " + std::to_string(h) + "x" + std::to_string(w) +
                      " not divisible by patch size " + std::to_string(cfg.patch_size));
  }
  EncoderParams p;
  const std::size_t e = cfg.embed_dim, ps = cfg.patch_size;
  p.token_h = h / ps;
  p.token_w = w / ps;
  p.patch_w = glorot({e, in_channels, ps, ps}, in_channels * ps * ps, e * ps * ps, rng);
  p.patch_b = zeros_param({e});
  p.pos = Tensor::uniform({p.token_h * p.token_w, e}, rng, -0.02, 0.02).set_requires_grad(true);
  p.blocks.resize(cfg.depth);
  for (auto& b : p.blocks) {
    b.ln1_g = ones_param({e});
    b.ln1_b = zeros_param({e});
    b.attn = AttentionParams::init(e, rng);
    b.ln2_g = ones_param({e});
    b.ln2_b = zeros_param({e});
    b.ffn_w1 = glorot({e, 4 * e}, e, 4 * e, rng);
    b.ffn_b1 = zeros_param({4 * e});
    b.ffn_w2 = glorot({4 * e, e}, 4 * e, e, rng);
    b.ffn_b2 = zeros_param({e});
  }
  return p;
}

void EncoderParams::visit(const std::string& prefix,
                          const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".patch.w", patch_w);
  fn(prefix + ".patch.b", patch_b);
  fn(prefix + ".pos", pos);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string bp = prefix + ".block" + std::to_string(i);
    auto& b = blocks[i];
    fn(bp + ".ln1.g", b.ln1_g);
    fn(bp + ".ln1.b", b.ln1_b);
    fn(bp + ".attn.wq", b.attn.wq);
    fn(bp + ".attn.bq", b.attn.bq);
    fn(bp + ".attn.wk", b.attn.wk);
    fn(bp + ".attn.bk", b.attn.bk);
    fn(bp + ".attn.wv", b.attn.wv);
    fn(bp + ".attn.bv", b.attn.bv);
    fn(bp + ".attn.wo", b.attn.wo);
    fn(bp + ".attn.bo", b.attn.bo);
    fn(bp + ".ln2.g", b.ln2_g);
    fn(bp + ".ln2.b", b.ln2_b);
    fn(bp + ".ffn.w1", b.ffn_w1);
    fn(bp + ".ffn.b1", b.ffn_b1);
    fn(bp + ".ffn.w2", b.ffn_w2);
    fn(bp + ".ffn.b2", b.ffn_b2);
  }
}

FeatureVolume encode(const Tensor& frames, const EncoderParams& params, const EncoderConfig& cfg) {
  cfg.validate();
  if (frames.ndim() != 4) {
    throw ShapeError("encode: expected (n, c, h, w), got " + shape_str(frames.shape()));
  }
  const Shape& fs = frames.shape();
  const std::size_t n = fs[0], h = fs[2], w = fs[3], ps = cfg.patch_size;
  if (h % ps != 0 || w % ps != 0) {
    throw ShapeError("encode: input " + shape_str(fs) + " not divisible by patch size " +
                     std::to_string(ps));
  }
  const std::size_t th = h / ps, tw = w / ps, hw = th * tw, e = cfg.embed_dim;
  if (params.token_h != th || params.token_w != tw) {
    throw ShapeError("encode: positional embedding built for " + std::to_string(params.token_h) +
                     "x" + std::to_string(params.token_w) + " tokens, input yields " +
                     std::to_string(th) + "x" + std::to_string(tw));
  }

  // Standardize [0,1] inputs to [-1,1], patchify, add positions.
  Tensor x = mul_scalar(add_scalar(frames, -0.5), 2.0);
  x = conv2d(x, params.patch_w, ps, 0);
  x = add_channel_bias(x, params.patch_b);
  x = permute(reshape(x, {n, e, hw}), {0, 2, 1});  // (n, hw, e)
  x = broadcast_add(x, params.pos);

  AttentionConfig acfg;
  acfg.embed_dim = e;
  acfg.num_heads = cfg.num_heads;

  FeatureVolume fv;
  fv.token_h = th;
  fv.token_w = tw;
  std::size_t next_tap = 0;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const auto& b = params.blocks[i];
    Tensor nrm = layernorm(x, 2, b.ln1_g, b.ln1_b);
    x = add(x, multihead_attention(nrm, nrm, b.attn, acfg));
    Tensor ff = layernorm(x, 2, b.ln2_g, b.ln2_b);
    ff = linear(ff, b.ffn_w1, b.ffn_b1);
    ff = gelu(ff);
    ff = linear(ff, b.ffn_w2, b.ffn_b2);
    x = add(x, ff);
    if (next_tap < cfg.tap_indices.size() && cfg.tap_indices[next_tap] == i) {
      fv.taps.push_back(reshape(permute(x, {0, 2, 1}), {n, e, th, tw}));
      ++next_tap;
    }
  }
  return fv;
}

}  // namespace sdpt
