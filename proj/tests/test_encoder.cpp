#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "sdpt/encoder.hpp"
#include "sdpt/errors.hpp"
#include "sdpt/gradcheck.hpp"
#include "sdpt/ops.hpp"
#include "sdpt/rng.hpp"

using namespace sdpt;

namespace {

EncoderConfig tiny_cfg() {
  EncoderConfig cfg;
  cfg.patch_size = 2;
  cfg.embed_dim = 4;
  cfg.depth = 2;
  cfg.num_heads = 2;
  cfg.tap_indices = {0, 1};
  return cfg;
}

}  // namespace

TEST_CASE("default config on 32x32 frames yields four (n,64,4,4) taps") {
  EncoderConfig cfg;  // defaults: patch 8, embed 64, depth 8, taps {1,3,5,7}
  Rng rng(1);
  EncoderParams params = EncoderParams::init(cfg, 3, 32, 32, rng);
  Tensor frames = Tensor::uniform({2, 3, 32, 32}, rng, 0.0, 1.0);
  FeatureVolume fv = encode(frames, params, cfg);
  REQUIRE(fv.taps.size() == 4);
  CHECK(fv.token_h == 4);
  CHECK(fv.token_w == 4);
  for (const auto& t : fv.taps) {
    CHECK(t.shape() == Shape{2, 64, 4, 4});
    for (double v : t.values()) CHECK(std::isfinite(v));
  }
  // Taps come from different depths, so they must differ.
  double diff = 0.0;
  for (std::size_t i = 0; i < fv.taps[0].numel(); ++i) {
    diff = std::max(diff, std::abs(fv.taps[0].values()[i] - fv.taps[3].values()[i]));
  }
  CHECK(diff > 1e-6);
}

TEST_CASE("frames are processed independently (bit-exact)") {
  EncoderConfig cfg = tiny_cfg();
  Rng rng(7);
  EncoderParams params = EncoderParams::init(cfg, 3, 6, 4, rng);
  Tensor f0 = Tensor::uniform({1, 3, 6, 4}, rng, 0.0, 1.0);
  Tensor f1 = Tensor::uniform({1, 3, 6, 4}, rng, 0.0, 1.0);
  Tensor both = concat({f0, f1}, 0);

  FeatureVolume fv_both = encode(both, params, cfg);
  FeatureVolume fv0 = encode(f0, params, cfg);
  FeatureVolume fv1 = encode(f1, params, cfg);
  for (std::size_t t = 0; t < fv_both.taps.size(); ++t) {
    const std::size_t per = fv0.taps[t].numel();
    REQUIRE(fv_both.taps[t].numel() == 2 * per);
    for (std::size_t i = 0; i < per; ++i) {
      CHECK(fv_both.taps[t].values()[i] == fv0.taps[t].values()[i]);
      CHECK(fv_both.taps[t].values()[per + i] == fv1.taps[t].values()[i]);
    }
  }
}

TEST_CASE("no gradient leaks across frames") {
  EncoderConfig cfg = tiny_cfg();
  Rng rng(9);
  EncoderParams params = EncoderParams::init(cfg, 2, 4, 4, rng);
  Tensor frames = Tensor::uniform({3, 2, 4, 4}, rng, 0.0, 1.0).set_requires_grad(true);
  FeatureVolume fv = encode(frames, params, cfg);
  // Loss reads only frame 1 of the last tap.
  Tensor loss = sum(slice(fv.taps.back(), 0, 1, 1));
  loss.backward();
  const auto& g = frames.grad();
  const std::size_t per = 2 * 4 * 4;
  double inside = 0.0;
  for (std::size_t i = 0; i < per; ++i) {
    CHECK(g[0 * per + i] == 0.0);
    CHECK(g[2 * per + i] == 0.0);
    inside = std::max(inside, std::abs(g[per + i]));
  }
  CHECK(inside > 0.0);
}

TEST_CASE("with zeroed residual branches the taps reduce to patch embedding") {
  // wo = 0 and ffn.w2 = 0 turn every block into an exact identity, so taps
  // equal patchify(standardize(frames)) + positions; that is checkable with a
  // plain loop.
  EncoderConfig cfg = tiny_cfg();
  Rng rng(13);
  EncoderParams params = EncoderParams::init(cfg, 2, 4, 6, rng);
  for (auto& b : params.blocks) {
    b.attn.wo = Tensor::zeros({4, 4});
    b.ffn_w2 = Tensor::zeros({16, 4});
  }
  Tensor frames = Tensor::uniform({2, 2, 4, 6}, rng, 0.0, 1.0);
  FeatureVolume fv = encode(frames, params, cfg);
  REQUIRE(fv.taps.size() == 2);

  const std::size_t n = 2, cin = 2, e = 4, ps = 2, th = 2, tw = 3;
  const auto& fw = params.patch_w.values();
  const auto& fb = params.patch_b.values();
  const auto& pos = params.pos.values();
  for (std::size_t ni = 0; ni < n; ++ni) {
    for (std::size_t ei = 0; ei < e; ++ei) {
      for (std::size_t ty = 0; ty < th; ++ty) {
        for (std::size_t tx = 0; tx < tw; ++tx) {
          double acc = fb[ei];
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t py = 0; py < ps; ++py)
              for (std::size_t px = 0; px < ps; ++px) {
                const double pix =
                    frames.values()[((ni * cin + ci) * 4 + ty * ps + py) * 6 + tx * ps + px];
                acc += fw[((ei * cin + ci) * ps + py) * ps + px] * (2.0 * pix - 1.0);
              }
          acc += pos[(ty * tw + tx) * e + ei];
          const double got = fv.taps[0].values()[((ni * e + ei) * th + ty) * tw + tx];
          CHECK(got == doctest::Approx(acc).epsilon(1e-12));
          CHECK(fv.taps[1].values()[((ni * e + ei) * th + ty) * tw + tx] ==
                doctest::Approx(acc).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("same seed gives identical parameters and outputs") {
  EncoderConfig cfg = tiny_cfg();
  Rng r1(42), r2(42);
  EncoderParams p1 = EncoderParams::init(cfg, 3, 4, 4, r1);
  EncoderParams p2 = EncoderParams::init(cfg, 3, 4, 4, r2);
  Rng fr(5);
  Tensor frames = Tensor::uniform({1, 3, 4, 4}, fr, 0.0, 1.0);
  FeatureVolume a = encode(frames, p1, cfg);
  FeatureVolume b = encode(frames, p2, cfg);
  for (std::size_t t = 0; t < a.taps.size(); ++t) {
    for (std::size_t i = 0; i < a.taps[t].numel(); ++i) {
      CHECK(a.taps[t].values()[i] == b.taps[t].values()[i]);
    }
  }
}

TEST_CASE("config and shape validation") {
  EncoderConfig cfg = tiny_cfg();
  Rng rng(3);

  EncoderConfig bad = cfg;
  bad.tap_indices = {0, 2};  // 2 >= depth
  CHECK_THROWS_AS(EncoderParams::init(bad, 3, 4, 4, rng), ConfigError);
  bad.tap_indices = {1, 1};
  CHECK_THROWS_AS(EncoderParams::init(bad, 3, 4, 4, rng), ConfigError);
  bad.tap_indices = {};
  CHECK_THROWS_AS(EncoderParams::init(bad, 3, 4, 4, rng), ConfigError);
  bad = cfg;
  bad.embed_dim = 5;  // not divisible by heads
  CHECK_THROWS_AS(EncoderParams::init(bad, 3, 4, 4, rng), ConfigError);
  // Input not divisible by patch size.
  CHECK_THROWS_AS(EncoderParams::init(cfg, 3, 5, 4, rng), ConfigError);

  EncoderParams params = EncoderParams::init(cfg, 3, 4, 4, rng);
  Rng fr(2);
  CHECK_THROWS_AS(encode(Tensor::uniform({1, 3, 8, 8}, fr, 0.0, 1.0), params, cfg), ShapeError);
  CHECK_THROWS_AS(encode(Tensor::uniform({3, 4, 4}, fr, 0.0, 1.0), params, cfg), ShapeError);
}

TEST_CASE("parameter visitation is stable and covers every tensor") {
  EncoderConfig cfg = tiny_cfg();
  Rng rng(21);
  EncoderParams params = EncoderParams::init(cfg, 3, 4, 4, rng);
  std::vector<std::string> names;
  params.visit("encoder", [&](const std::string& name, Tensor& t) {
    names.push_back(name);
    CHECK(t.requires_grad());
  });
  // 3 top-level + 16 per block * 2 blocks.
  CHECK(names.size() == 35);
  CHECK(names[0] == "encoder.patch.w");
  CHECK(names[2] == "encoder.pos");
  CHECK(names[3] == "encoder.block0.ln1.g");
  CHECK(names.back() == "encoder.block1.ffn.b2");
  // All names unique.
  auto sorted = names;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("encoder gradients match finite differences") {
  EncoderConfig cfg = tiny_cfg();
  Rng rng(77);
  Rng aux = rng.fork(1);

  auto weighted = [](const FeatureVolume& fv, Rng r) {
    Tensor acc;
    for (const auto& t : fv.taps) {
      Tensor wts = Tensor::uniform(t.shape(), r, 0.5, 1.5);
      Tensor s = sum(mul(t, wts));
      acc = acc.defined() ? add(acc, s) : s;
    }
    return acc;
  };

  SUBCASE("with respect to the input frames") {
    auto f = [&](const Tensor& x) {
      Rng local = aux;
      EncoderParams params = EncoderParams::init(cfg, 2, 4, 4, local);
      return weighted(encode(x, params, cfg), local);
    };
    Tensor x = Tensor::uniform({2, 2, 4, 4}, rng, 0.1, 0.9);
    auto rep = check_gradients(f, x, 1e-5, 1e-6);
    INFO("worst rel err ", rep.max_rel_error);
    CHECK(rep.passed);
  }

  SUBCASE("with respect to a mid-stack weight") {
    Rng aux2 = rng.fork(2);
    auto f = [&](const Tensor& wt) {
      Rng local = aux2;
      EncoderParams params = EncoderParams::init(cfg, 2, 4, 4, local);
      params.blocks[0].ffn_w1 = wt;
      Tensor frames = Tensor::uniform({1, 2, 4, 4}, local, 0.1, 0.9);
      return weighted(encode(frames, params, cfg), local);
    };
    Rng wr = rng.fork(3);
    Tensor w = Tensor::uniform({4, 16}, wr, -0.5, 0.5);
    auto rep = check_gradients(f, w, 1e-5, 1e-6, {0, 5, 17, 33, 48, 63});
    INFO("worst rel err ", rep.max_rel_error);
    CHECK(rep.passed);
  }
}
