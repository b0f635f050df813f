#include "sdpt/attention.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "sdpt/errors.hpp"

namespace sdpt {

void AttentionConfig::validate() const {
  if (embed_dim == 0 || num_heads == 0) {
    throw ConfigError("attention: embed_dim and num_heads must be positive");
  }
  if (embed_dim % num_heads != 0) {
    throw ConfigError("attention: embed_dim " + std::to_string(embed_dim) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
}

AttentionParams AttentionParams::init(std::size_t embed_dim, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(embed_dim + embed_dim));
  auto w = [&] { return Tensor::uniform({embed_dim, embed_dim}, rng, -bound, bound).set_requires_grad(true); };
  auto b = [&] { return Tensor::zeros({embed_dim}).set_requires_grad(true); };
  AttentionParams p;
  p.wq = w(); p.bq = b();
  p.wk = w(); p.bk = b();
  p.wv = w(); p.bv = b();
  p.wo = w(); p.bo = b();
  return p;
}

AttentionParams AttentionParams::identity(std::size_t embed_dim) {
  std::vector<double> eye(embed_dim * embed_dim, 0.0);
  for (std::size_t i = 0; i < embed_dim; ++i) eye[i * embed_dim + i] = 1.0;
  AttentionParams p;
  p.wq = Tensor::from_data({embed_dim, embed_dim}, eye);
  p.wk = p.wq;
  p.wv = p.wq;
  p.wo = p.wq;
  p.bq = Tensor::zeros({embed_dim});
  p.bk = p.bq;
  p.bv = p.bq;
  p.bo = p.bq;
  return p;
}

namespace {

// Classic sinusoidal encoding over sequence positions, shape (t, c).
Tensor sinusoidal_encoding(std::size_t t, std::size_t c) {
  std::vector<double> v(t * c, 0.0);
  for (std::size_t p = 0; p < t; ++p) {
    for (std::size_t i = 0; i < c; ++i) {
      const double freq = std::pow(10000.0, -double(2 * (i / 2)) / double(c));
      const double angle = double(p) * freq;
      v[p * c + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from_data({t, c}, v);
}

// (B, T, C) -> (B*heads, T, C/heads)
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const Shape& s = x.shape();
  const std::size_t b = s[0], t = s[1], c = s[2], dk = c / heads;
  Tensor r = reshape(x, {b, t, heads, dk});
  r = permute(r, {0, 2, 1, 3});
  return reshape(r, {b * heads, t, dk});
}

// Inverse of split_heads.
Tensor merge_heads(const Tensor& x, std::size_t b, std::size_t heads) {
  const Shape& s = x.shape();
  const std::size_t t = s[1], dk = s[2];
  Tensor r = reshape(x, {b, heads, t, dk});
  r = permute(r, {0, 2, 1, 3});
  return reshape(r, {b, t, heads * dk});
}

}  // namespace

Tensor multihead_attention(const Tensor& q_src, const Tensor& kv_src,
                           const AttentionParams& params, const AttentionConfig& cfg) {
  cfg.validate();
  if (q_src.ndim() != 3 || kv_src.ndim() != 3) {
    throw ShapeError("attention: expected rank-3 (batch, tokens, channels) inputs, got " +
                     shape_str(q_src.shape()) + " and " + shape_str(kv_src.shape()));
  }
  if (q_src.shape()[2] != cfg.embed_dim || kv_src.shape()[2] != cfg.embed_dim) {
    throw ShapeError("attention: channel dim mismatch, inputs " + shape_str(q_src.shape()) +
                     " / " + shape_str(kv_src.shape()) + " vs embed_dim " +
                     std::to_string(cfg.embed_dim));
  }
  if (q_src.shape()[0] != kv_src.shape()[0]) {
    throw ShapeError("attention: batch mismatch between " + shape_str(q_src.shape()) +
                     " and " + shape_str(kv_src.shape()));
  }

  Tensor q_in = q_src;
  Tensor kv_in = kv_src;
  if (cfg.temporal_pos_enc) {
    q_in = broadcast_add(q_in, sinusoidal_encoding(q_in.shape()[1], cfg.embed_dim));
    kv_in = broadcast_add(kv_in, sinusoidal_encoding(kv_in.shape()[1], cfg.embed_dim));
  }

  const std::size_t b = q_src.shape()[0];
  Tensor q = split_heads(linear(q_in, params.wq, params.bq), cfg.num_heads);
  Tensor k = split_heads(linear(kv_in, params.wk, params.bk), cfg.num_heads);
  Tensor v = split_heads(linear(kv_in, params.wv, params.bv), cfg.num_heads);

  Tensor scores = matmul(q, permute(k, {0, 2, 1}));
  scores = mul_scalar(scores, 1.0 / std::sqrt(double(cfg.head_dim())));
  Tensor weights = softmax(scores, 2);
  Tensor ctx = merge_heads(matmul(weights, v), b, cfg.num_heads);
  return linear(ctx, params.wo, params.bo);
}

Tensor to_temporal_tokens(const Tensor& frames) {
  if (frames.ndim() != 4) {
    throw ShapeError("to_temporal_tokens: expected (t, c, h, w), got " + shape_str(frames.shape()));
  }
  const Shape& s = frames.shape();
  Tensor r = permute(frames, {2, 3, 0, 1});  // (h, w, t, c)
  return reshape(r, {s[2] * s[3], s[0], s[1]});
}

Tensor from_temporal_tokens(const Tensor& tokens, std::size_t h, std::size_t w) {
  if (tokens.ndim() != 3) {
    throw ShapeError("from_temporal_tokens: expected (h*w, t, c), got " + shape_str(tokens.shape()));
  }
  const Shape& s = tokens.shape();
  if (s[0] != h * w) {
    throw ShapeError("from_temporal_tokens: " + std::to_string(h) + "x" + std::to_string(w) +
                     " grid incompatible with " + shape_str(tokens.shape()));
  }
  Tensor r = reshape(tokens, {h, w, s[1], s[2]});
  return permute(r, {2, 3, 0, 1});
}

}  // namespace sdpt
