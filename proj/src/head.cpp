#include "sdpt/head.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sdpt/errors.hpp"
#include "sdpt/ops.hpp"

namespace sdpt {

void HeadConfig::validate() const {
  if (feature_dims.empty()) throw ConfigError("head: feature_dims must be non-empty");
  if (fusion_dim < 2 || fusion_dim % 2 != 0) {
    throw ConfigError("head: fusion_dim must be even and >= 2, got " + std::to_string(fusion_dim));
  }
  if (num_heads == 0) throw ConfigError("head: num_heads must be positive");
  for (std::size_t i = 0; i < temporal_sites.size(); ++i) {
    if (temporal_sites[i] >= feature_dims.size()) {
      throw ConfigError("head: temporal site " + std::to_string(temporal_sites[i]) +
                        " out of range for " + std::to_string(feature_dims.size()) + " streams");
    }
    if (i > 0 && temporal_sites[i] <= temporal_sites[i - 1]) {
      throw ConfigError("head: temporal sites must be strictly increasing");
    }
    if (feature_dims[temporal_sites[i]] % num_heads != 0) {
      throw ConfigError("head: stream width " + std::to_string(feature_dims[temporal_sites[i]]) +
                        " at temporal site " + std::to_string(temporal_sites[i]) +
                        " not divisible by num_heads " + std::to_string(num_heads));
    }
  }
}

bool HeadConfig::is_temporal_site(std::size_t site) const {
  return std::find(temporal_sites.begin(), temporal_sites.end(), site) != temporal_sites.end();
}

double reassemble_scale(std::size_t site, std::size_t num_sites) {
  // Shallow to deep: ..., 4x, 2x, 1x, 0.5x (deepest is always half).
  return std::pow(2.0, double(num_sites) - 2.0 - double(site));
}

namespace {

Tensor glorot(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  return Tensor::uniform(shape, rng, -bound, bound).set_requires_grad(true);
}

Tensor conv_glorot(std::size_t out_c, std::size_t in_c, std::size_t k, Rng& rng) {
  return glorot({out_c, in_c, k, k}, in_c * k * k, out_c * k * k, rng);
}

Tensor zeros_param(const Shape& shape) { return Tensor::zeros(shape).set_requires_grad(true); }
Tensor ones_param(const Shape& shape) { return Tensor::full(shape, 1.0).set_requires_grad(true); }

ResidualConvUnit rcu_init(std::size_t c, Rng& rng) {
  ResidualConvUnit r;
  r.w1 = conv_glorot(c, c, 3, rng);
  r.b1 = zeros_param({c});
  r.w2 = conv_glorot(c, c, 3, rng);
  r.b2 = zeros_param({c});
  return r;
}

Tensor rcu_apply(const Tensor& x, const ResidualConvUnit& r) {
  Tensor y = relu(x);
  y = add_channel_bias(conv2d(y, r.w1, 1, 1), r.b1);
  y = relu(y);
  y = add_channel_bias(conv2d(y, r.w2, 1, 1), r.b2);
  return add(x, y);
}

std::size_t scaled_extent(std::size_t n, double scale) {
  return std::max<std::size_t>(1, std::size_t(std::llround(double(n) * scale)));
}

Tensor ffn_apply(const Tensor& x, const TemporalLayerParams& p) {
  Tensor y = linear(x, p.ffn_w1, p.ffn_b1);
  y = gelu(y);
  return linear(y, p.ffn_w2, p.ffn_b2);
}

}  // namespace

HeadParams HeadParams::init(const HeadConfig& cfg, std::size_t embed_dim, Rng& rng) {
  cfg.validate();
  HeadParams p;
  const std::size_t n = cfg.feature_dims.size();

  for (std::size_t s = 0; s < n; ++s) {
    ReassembleParams r;
    r.w = conv_glorot(cfg.feature_dims[s], embed_dim, 1, rng);
    r.b = zeros_param({cfg.feature_dims[s]});
    p.reassemble.push_back(r);
  }

  for (std::size_t site : cfg.temporal_sites) {
    const std::size_t d = cfg.feature_dims[site];
    std::vector<TemporalLayerParams> layers;
    for (std::size_t l = 0; l < cfg.temporal_layers_per_site; ++l) {
      TemporalLayerParams t;
      t.ln1_g = ones_param({d});
      t.ln1_b = zeros_param({d});
      t.attn = AttentionParams::init(d, rng);
      t.ln2_g = ones_param({d});
      t.ln2_b = zeros_param({d});
      t.ffn_w1 = glorot({d, 4 * d}, d, 4 * d, rng);
      t.ffn_b1 = zeros_param({4 * d});
      t.ffn_w2 = glorot({4 * d, d}, 4 * d, d, rng);
      t.ffn_b2 = zeros_param({d});
      if (cfg.zero_init_temporal) {
        t.zero_w = zeros_param({d, d});
      } else {
        t.zero_w = glorot({d, d}, d, d, rng);
      }
      t.zero_b = zeros_param({d});
      layers.push_back(std::move(t));
    }
    p.temporal.push_back(std::move(layers));
  }

  for (std::size_t s = 0; s < n; ++s) {
    p.fusion.proj_w.push_back(conv_glorot(cfg.fusion_dim, cfg.feature_dims[s], 3, rng));
    p.fusion.proj_b.push_back(zeros_param({cfg.fusion_dim}));
    p.fusion.pre.push_back(rcu_init(cfg.fusion_dim, rng));
  }
  for (std::size_t s = 0; s + 1 < n; ++s) {
    p.fusion.post.push_back(rcu_init(cfg.fusion_dim, rng));
  }

  const std::size_t f = cfg.fusion_dim, f2 = cfg.fusion_dim / 2;
  p.out.c1_w = conv_glorot(f2, f, 3, rng);
  p.out.c1_b = zeros_param({f2});
  p.out.c2_w = conv_glorot(f2, f2, 3, rng);
  p.out.c2_b = zeros_param({f2});
  p.out.c3_w = conv_glorot(1, f2, 1, rng);
  p.out.c3_b = zeros_param({1});
  return p;
}

void HeadParams::visit(const std::string& prefix,
                       const std::function<void(const std::string&, Tensor&)>& fn) {
  for (std::size_t s = 0; s < reassemble.size(); ++s) {
    fn(prefix + ".reassemble" + std::to_string(s) + ".w", reassemble[s].w);
    fn(prefix + ".reassemble" + std::to_string(s) + ".b", reassemble[s].b);
  }
  for (std::size_t i = 0; i < temporal.size(); ++i) {
    for (std::size_t l = 0; l < temporal[i].size(); ++l) {
      const std::string tp =
          prefix + ".temporal" + std::to_string(i) + ".layer" + std::to_string(l);
      auto& t = temporal[i][l];
      fn(tp + ".ln1.g", t.ln1_g);
      fn(tp + ".ln1.b", t.ln1_b);
      fn(tp + ".attn.wq", t.attn.wq);
      fn(tp + ".attn.bq", t.attn.bq);
      fn(tp + ".attn.wk", t.attn.wk);
      fn(tp + ".attn.bk", t.attn.bk);
      fn(tp + ".attn.wv", t.attn.wv);
      fn(tp + ".attn.bv", t.attn.bv);
      fn(tp + ".attn.wo", t.attn.wo);
      fn(tp + ".attn.bo", t.attn.bo);
      fn(tp + ".ln2.g", t.ln2_g);
      fn(tp + ".ln2.b", t.ln2_b);
      fn(tp + ".ffn.w1", t.ffn_w1);
      fn(tp + ".ffn.b1", t.ffn_b1);
      fn(tp + ".ffn.w2", t.ffn_w2);
      fn(tp + ".ffn.b2", t.ffn_b2);
      fn(tp + ".zero.w", t.zero_w);
      fn(tp + ".zero.b", t.zero_b);
    }
  }
  for (std::size_t s = 0; s < fusion.proj_w.size(); ++s) {
    const std::string fp = prefix + ".fusion.proj" + std::to_string(s);
    fn(fp + ".w", fusion.proj_w[s]);
    fn(fp + ".b", fusion.proj_b[s]);
  }
  auto visit_rcu = [&](const std::string& rp, ResidualConvUnit& r) {
    fn(rp + ".w1", r.w1);
    fn(rp + ".b1", r.b1);
    fn(rp + ".w2", r.w2);
    fn(rp + ".b2", r.b2);
  };
  for (std::size_t s = 0; s < fusion.pre.size(); ++s) {
    visit_rcu(prefix + ".fusion.pre" + std::to_string(s), fusion.pre[s]);
  }
  for (std::size_t s = 0; s < fusion.post.size(); ++s) {
    visit_rcu(prefix + ".fusion.post" + std::to_string(s), fusion.post[s]);
  }
  fn(prefix + ".out.c1.w", out.c1_w);
  fn(prefix + ".out.c1.b", out.c1_b);
  fn(prefix + ".out.c2.w", out.c2_w);
  fn(prefix + ".out.c2.b", out.c2_b);
  fn(prefix + ".out.c3.w", out.c3_w);
  fn(prefix + ".out.c3.b", out.c3_b);
}

Tensor reassemble_site(const Tensor& tap, std::size_t site, const HeadConfig& cfg,
                       const ReassembleParams& params) {
  if (tap.ndim() != 4) {
    throw ShapeError("reassemble: expected (n, e, th, tw), got " + shape_str(tap.shape()));
  }
  Tensor y = add_channel_bias(conv2d(tap, params.w, 1, 0), params.b);
  const double scale = reassemble_scale(site, cfg.feature_dims.size());
  const std::size_t oh = scaled_extent(tap.shape()[2], scale);
  const std::size_t ow = scaled_extent(tap.shape()[3], scale);
  return resize_bilinear(y, oh, ow);
}

Tensor temporal_layer(const Tensor& current, const Tensor& keyframes,
                      const TemporalLayerParams& params, const HeadConfig& cfg) {
  if (current.ndim() != 4 || keyframes.ndim() != 4) {
    throw ShapeError("temporal_layer: expected rank-4 inputs, got " + shape_str(current.shape()) +
                     " and " + shape_str(keyframes.shape()));
  }
  const Shape& cs = current.shape();
  const Shape& ks = keyframes.shape();
  if (cs[1] != ks[1] || cs[2] != ks[2] || cs[3] != ks[3]) {
    throw ShapeError("temporal_layer: keyframes " + shape_str(ks) +
                     " incompatible with current " + shape_str(cs));
  }
  const std::size_t d = cs[1], h = cs[2], w = cs[3];

  AttentionConfig acfg;
  acfg.embed_dim = d;
  acfg.num_heads = cfg.num_heads;

  Tensor q_tok = to_temporal_tokens(current);     // (hw, t, d)
  Tensor kv_tok = to_temporal_tokens(keyframes);  // (hw, m, d)
  if (cfg.self_attention) kv_tok = concat({kv_tok, q_tok}, 1);

  Tensor q_n = layernorm(q_tok, 2, params.ln1_g, params.ln1_b);
  Tensor kv_n = layernorm(kv_tok, 2, params.ln1_g, params.ln1_b);
  Tensor a = add(q_tok, multihead_attention(q_n, kv_n, params.attn, acfg));
  Tensor f = add(a, ffn_apply(layernorm(a, 2, params.ln2_g, params.ln2_b), params));
  Tensor delta = linear(f, params.zero_w, params.zero_b);
  return add(current, from_temporal_tokens(delta, h, w));
}

Tensor fuse(const std::vector<Tensor>& streams, const FusionParams& params,
            const HeadConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.feature_dims.size();
  if (streams.size() != n) {
    throw ShapeError("fuse: expected " + std::to_string(n) + " streams, got " +
                     std::to_string(streams.size()));
  }
  for (std::size_t s = 0; s < n; ++s) {
    if (streams[s].ndim() != 4 || streams[s].shape()[1] != cfg.feature_dims[s]) {
      throw ShapeError("fuse: stream " + std::to_string(s) + " has shape " +
                       shape_str(streams[s].shape()) + ", expected " +
                       std::to_string(cfg.feature_dims[s]) + " channels");
    }
  }

  auto branch = [&](std::size_t s) {
    Tensor y = add_channel_bias(conv2d(streams[s], params.proj_w[s], 1, 1), params.proj_b[s]);
    return rcu_apply(y, params.pre[s]);
  };

  Tensor running = branch(n - 1);
  for (std::size_t k = n - 1; k-- > 0;) {
    Tensor up = resize_bilinear(running, streams[k].shape()[2], streams[k].shape()[3]);
    running = rcu_apply(add(branch(k), up), params.post[k]);
  }
  return running;
}

Tensor output_head(const Tensor& fused, const OutputHeadParams& params, std::size_t out_h,
                   std::size_t out_w) {
  Tensor y = add_channel_bias(conv2d(fused, params.c1_w, 1, 1), params.c1_b);
  y = resize_bilinear(y, out_h, out_w);
  y = add_channel_bias(conv2d(y, params.c2_w, 1, 1), params.c2_b);
  y = relu(y);
  y = add_channel_bias(conv2d(y, params.c3_w, 1, 0), params.c3_b);
  return softplus(y);
}

}  // namespace sdpt
