#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "sdpt/errors.hpp"
#include "sdpt/gradcheck.hpp"
#include "sdpt/head.hpp"
#include "sdpt/ops.hpp"
#include "sdpt/rng.hpp"

using namespace sdpt;

namespace {

HeadConfig tiny_cfg() {
  HeadConfig cfg;
  cfg.feature_dims = {4, 8};
  cfg.fusion_dim = 4;
  cfg.temporal_sites = {1};
  cfg.temporal_layers_per_site = 1;
  cfg.num_heads = 2;
  return cfg;
}

Tensor rand_t(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(s, rng, lo, hi);
}

}  // namespace

TEST_CASE("reassemble scales are 4x/2x/1x/0.5x shallow to deep") {
  CHECK(reassemble_scale(0, 4) == 4.0);
  CHECK(reassemble_scale(1, 4) == 2.0);
  CHECK(reassemble_scale(2, 4) == 1.0);
  CHECK(reassemble_scale(3, 4) == 0.5);
  CHECK(reassemble_scale(0, 2) == 1.0);
  CHECK(reassemble_scale(1, 2) == 0.5);
}

TEST_CASE("reassemble produces the expected stream shapes from a 4x4 grid") {
  HeadConfig cfg;  // default {24,32,48,64}
  Rng rng(1);
  HeadParams p = HeadParams::init(cfg, 64, rng);
  Tensor tap = rand_t({3, 64, 4, 4}, rng);
  const std::vector<Shape> want = {
      {3, 24, 16, 16}, {3, 32, 8, 8}, {3, 48, 4, 4}, {3, 64, 2, 2}};
  for (std::size_t s = 0; s < 4; ++s) {
    Tensor y = reassemble_site(tap, s, cfg, p.reassemble[s]);
    CHECK(y.shape() == want[s]);
  }
}

TEST_CASE("zero-initialized temporal layer is a bit-exact identity") {
  HeadConfig cfg = tiny_cfg();
  Rng rng(5);
  HeadParams p = HeadParams::init(cfg, 16, rng);
  Tensor cur = rand_t({3, 8, 2, 3}, rng);
  Tensor kf = rand_t({2, 8, 2, 3}, rng);

  Tensor out = temporal_layer(cur, kf, p.temporal[0][0], cfg);
  REQUIRE(out.shape() == cur.shape());
  for (std::size_t i = 0; i < cur.numel(); ++i) CHECK(out.values()[i] == cur.values()[i]);

  SUBCASE("also with self-attention enabled") {
    HeadConfig sa = cfg;
    sa.self_attention = true;
    Tensor out2 = temporal_layer(cur, kf, p.temporal[0][0], sa);
    for (std::size_t i = 0; i < cur.numel(); ++i) CHECK(out2.values()[i] == cur.values()[i]);
  }

  SUBCASE("non-zero projection breaks the identity") {
    TemporalLayerParams t = p.temporal[0][0];
    Rng r2(6);
    t.zero_w = rand_t({8, 8}, r2, -0.3, 0.3);
    Tensor out3 = temporal_layer(cur, kf, t, cfg);
    double diff = 0.0;
    for (std::size_t i = 0; i < cur.numel(); ++i) {
      diff = std::max(diff, std::abs(out3.values()[i] - cur.values()[i]));
    }
    CHECK(diff > 1e-8);
  }
}

TEST_CASE("a single keyframe contributes the same update to every frame") {
  // With one key the softmax weight is exactly 1 for every query, so the
  // attention context depends only on the keyframe. Disabling the FFN branch
  // and using an identity output projection makes out - 2*current equal to
  // that context, which therefore cannot vary with the frame index.
  HeadConfig cfg = tiny_cfg();
  Rng rng(8);
  HeadParams p = HeadParams::init(cfg, 16, rng);
  TemporalLayerParams t = p.temporal[0][0];
  t.ffn_w2 = Tensor::zeros({32, 8});
  std::vector<double> eye(64, 0.0);
  for (int i = 0; i < 8; ++i) eye[i * 8 + i] = 1.0;
  t.zero_w = Tensor::from_data({8, 8}, eye);

  const std::size_t frames = 4, d = 8, h = 2, w = 2;
  Tensor cur = rand_t({frames, d, h, w}, rng);
  Tensor kf = rand_t({1, d, h, w}, rng);
  Tensor out = temporal_layer(cur, kf, t, cfg);

  const std::size_t per = d * h * w;
  for (std::size_t i = 0; i < per; ++i) {
    const double base = out.values()[i] - 2.0 * cur.values()[i];
    for (std::size_t f = 1; f < frames; ++f) {
      const double other = out.values()[f * per + i] - 2.0 * cur.values()[f * per + i];
      CHECK(other == doctest::Approx(base).epsilon(1e-12));
    }
  }
}

TEST_CASE("temporal layer rejects mismatched grids") {
  HeadConfig cfg = tiny_cfg();
  Rng rng(4);
  HeadParams p = HeadParams::init(cfg, 16, rng);
  Tensor cur = rand_t({2, 8, 2, 2}, rng);
  CHECK_THROWS_AS(temporal_layer(cur, rand_t({1, 8, 4, 4}, rng), p.temporal[0][0], cfg),
                  ShapeError);
  CHECK_THROWS_AS(temporal_layer(cur, rand_t({1, 4, 2, 2}, rng), p.temporal[0][0], cfg),
                  ShapeError);
}

TEST_CASE("fusion output sits at the shallowest stream resolution") {
  HeadConfig cfg;  // default 4 streams, fusion 32
  Rng rng(11);
  HeadParams p = HeadParams::init(cfg, 64, rng);
  std::vector<Tensor> streams = {
      rand_t({2, 24, 16, 16}, rng), rand_t({2, 32, 8, 8}, rng), rand_t({2, 48, 4, 4}, rng),
      rand_t({2, 64, 2, 2}, rng)};
  Tensor fused = fuse(streams, p.fusion, cfg);
  CHECK(fused.shape() == Shape{2, 32, 16, 16});
  for (double v : fused.values()) CHECK(std::isfinite(v));
}

TEST_CASE("with zeroed deep branches fusion reduces to the shallow projection") {
  HeadConfig cfg = tiny_cfg();
  cfg.temporal_sites = {};
  Rng rng(17);
  HeadParams p = HeadParams::init(cfg, 16, rng);
  // Kill stream 1's projection and make every residual conv unit an identity.
  p.fusion.proj_w[1] = Tensor::zeros(p.fusion.proj_w[1].shape());
  p.fusion.proj_b[1] = Tensor::zeros(p.fusion.proj_b[1].shape());
  for (auto* rcu : {&p.fusion.pre[0], &p.fusion.pre[1], &p.fusion.post[0]}) {
    rcu->w1 = Tensor::zeros(rcu->w1.shape());
    rcu->b1 = Tensor::zeros(rcu->b1.shape());
    rcu->w2 = Tensor::zeros(rcu->w2.shape());
    rcu->b2 = Tensor::zeros(rcu->b2.shape());
  }
  std::vector<Tensor> streams = {rand_t({1, 4, 4, 4}, rng), rand_t({1, 8, 2, 2}, rng)};
  Tensor fused = fuse(streams, p.fusion, cfg);
  Tensor want = add_channel_bias(conv2d(streams[0], p.fusion.proj_w[0], 1, 1), p.fusion.proj_b[0]);
  REQUIRE(fused.shape() == want.shape());
  for (std::size_t i = 0; i < fused.numel(); ++i) {
    CHECK(fused.values()[i] == doctest::Approx(want.values()[i]).epsilon(1e-14));
  }
}

TEST_CASE("gradient reaches every fused stream") {
  HeadConfig cfg = tiny_cfg();
  cfg.temporal_sites = {};
  Rng rng(23);
  HeadParams p = HeadParams::init(cfg, 16, rng);
  Tensor s0 = rand_t({1, 4, 4, 4}, rng).set_requires_grad(true);
  Tensor s1 = rand_t({1, 8, 2, 2}, rng).set_requires_grad(true);
  Tensor fused = fuse({s0, s1}, p.fusion, cfg);
  sum(fused).backward();
  auto nonzero = [](const std::vector<double>& g) {
    double m = 0.0;
    for (double v : g) m = std::max(m, std::abs(v));
    return m > 0.0;
  };
  CHECK(nonzero(s0.grad()));
  CHECK(nonzero(s1.grad()));
}

TEST_CASE("output head is strictly positive with the requested resolution") {
  HeadConfig cfg = tiny_cfg();
  Rng rng(31);
  HeadParams p = HeadParams::init(cfg, 16, rng);
  Tensor fused = rand_t({2, 4, 4, 4}, rng, -3.0, 3.0);
  Tensor depth = output_head(fused, p.out, 8, 8);
  CHECK(depth.shape() == Shape{2, 1, 8, 8});
  for (double v : depth.values()) {
    CHECK(v > 0.0);
    CHECK(std::isfinite(v));
  }
}

TEST_CASE("config validation") {
  Rng rng(2);
  HeadConfig cfg = tiny_cfg();
  cfg.fusion_dim = 5;
  CHECK_THROWS_AS(HeadParams::init(cfg, 16, rng), ConfigError);
  cfg = tiny_cfg();
  cfg.temporal_sites = {2};
  CHECK_THROWS_AS(HeadParams::init(cfg, 16, rng), ConfigError);
  cfg = tiny_cfg();
  cfg.temporal_sites = {0};  // width 4 with 3 heads
  cfg.num_heads = 3;
  CHECK_THROWS_AS(HeadParams::init(cfg, 16, rng), ConfigError);
  cfg = tiny_cfg();
  HeadParams p = HeadParams::init(cfg, 16, rng);
  CHECK_THROWS_AS(fuse({rand_t({1, 4, 4, 4}, rng)}, p.fusion, cfg), ShapeError);
  CHECK_THROWS_AS(fuse({rand_t({1, 8, 4, 4}, rng), rand_t({1, 8, 2, 2}, rng)}, p.fusion, cfg),
                  ShapeError);
}

TEST_CASE("parameter visitation covers the default layout once") {
  HeadConfig cfg;  // defaults
  Rng rng(3);
  HeadParams p = HeadParams::init(cfg, 64, rng);
  std::vector<std::string> names;
  p.visit("head", [&](const std::string& n, Tensor&) { names.push_back(n); });
  // reassemble 4*2, temporal 2 sites * 2 layers * 18, fusion 4*2 + 4*4 + 3*4,
  // output head 6.
  CHECK(names.size() == 8 + 72 + 36 + 6);
  auto sorted = names;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  CHECK(std::find(names.begin(), names.end(), "head.temporal1.layer1.zero.w") != names.end());
  CHECK(std::find(names.begin(), names.end(), "head.fusion.post2.w2") != names.end());
}

TEST_CASE("temporal layer gradients match finite differences") {
  HeadConfig cfg = tiny_cfg();
  Rng rng(41);
  Rng aux = rng.fork(9);

  auto weighted = [](const Tensor& y, Rng r) {
    Tensor wts = Tensor::uniform(y.shape(), r, 0.5, 1.5);
    return sum(mul(y, wts));
  };

  for (int variant = 0; variant < 3; ++variant) {
    Rng case_rng = aux.fork(variant);
    auto f = [&](const Tensor& x) {
      Rng local = case_rng;
      HeadConfig c2 = cfg;
      c2.zero_init_temporal = false;
      HeadParams p = HeadParams::init(c2, 16, local);
      Tensor cur = Tensor::uniform({2, 8, 2, 2}, local, -1.0, 1.0);
      Tensor kf = Tensor::uniform({2, 8, 2, 2}, local, -1.0, 1.0);
      Tensor out;
      if (variant == 0) {
        out = temporal_layer(x, kf, p.temporal[0][0], c2);
      } else if (variant == 1) {
        out = temporal_layer(cur, x, p.temporal[0][0], c2);
      } else {
        TemporalLayerParams t = p.temporal[0][0];
        t.attn.wv = x;
        out = temporal_layer(cur, kf, t, c2);
      }
      return weighted(out, local);
    };
    Shape xs = variant == 2 ? Shape{8, 8} : Shape{2, 8, 2, 2};
    Tensor x = Tensor::uniform(xs, rng, -1.0, 1.0);
    auto rep = check_gradients(f, x, 1e-5, 1e-6, {0, 3, 7, 13, 21, 30});
    INFO("variant ", variant, " worst rel err ", rep.max_rel_error);
    CHECK(rep.passed);
  }
}

TEST_CASE("fusion and output head gradients match finite differences") {
  HeadConfig cfg = tiny_cfg();
  cfg.temporal_sites = {};
  Rng rng(51);
  Rng aux = rng.fork(1);
  auto f = [&](const Tensor& x) {
    Rng local = aux;
    HeadParams p = HeadParams::init(cfg, 16, local);
    Tensor s1 = Tensor::uniform({1, 8, 2, 2}, local, -1.0, 1.0);
    Tensor fused = fuse({x, s1}, p.fusion, cfg);
    Tensor depth = output_head(fused, p.out, 8, 8);
    Tensor wts = Tensor::uniform(depth.shape(), local, 0.5, 1.5);
    return sum(mul(depth, wts));
  };
  Tensor x = Tensor::uniform({1, 4, 4, 4}, rng, -1.0, 1.0);
  auto rep = check_gradients(f, x, 1e-5, 1e-6, {0, 9, 18, 27, 36, 45, 54, 63});
  INFO("worst rel err ", rep.max_rel_error);
  CHECK(rep.passed);
}
