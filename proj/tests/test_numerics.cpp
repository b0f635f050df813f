#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "sdpt/gradcheck.hpp"
#include "sdpt/ops.hpp"
#include "sdpt/rng.hpp"
#include "sdpt/tensor.hpp"

using namespace sdpt;

namespace {

Tensor rand_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(shape, rng, lo, hi);
}

// Weighted-sum head so the finite-difference probe is sensitive to every
// output coordinate with distinct coefficients.
Tensor weighted(const Tensor& y, Rng& rng) {
  Tensor w = rand_tensor(y.shape(), rng, 0.1, 1.0);
  return sum(mul(y, w));
}

// Runs check_gradients over `seeds` random instances of a unary tensor map.
void fd_suite(const char* name, int seeds,
              const std::function<Tensor(Rng&)>& make_x,
              const std::function<Tensor(const Tensor&, Rng&)>& apply,
              double tol = 1e-6) {
  for (int s = 0; s < seeds; ++s) {
    Rng rng(0x5d907000u + static_cast<std::uint64_t>(s) * 7919u);
    Tensor x = make_x(rng);
    Rng wrng = rng.fork(1);
    auto f = [&](const Tensor& t) {
      Rng local = wrng;  // same weights for every probe
      return apply(t, local);
    };
    GradCheckReport rep = check_gradients(f, x, 1e-5, tol);
    INFO(std::string(name) << " seed " << s << " worst coord " << rep.worst_index
                           << " analytic " << rep.analytic_at_worst << " numeric "
                           << rep.numeric_at_worst);
    CHECK(rep.passed);
  }
}

}  // namespace

TEST_CASE("tensor construction and leaf contracts") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.shape() == Shape{2, 3});
  CHECK(z.numel() == 6);
  CHECK_FALSE(z.requires_grad());
  for (double v : z.values()) CHECK(v == 0.0);

  Tensor t = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(t.values() == std::vector<double>{1, 2, 3, 4});
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), ShapeError);

  // Only leaves may be mutated or flagged as parameters.
  Tensor a = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
  Tensor y = mul(a, a);
  CHECK_THROWS(y.mutable_values());
  CHECK_THROWS(y.set_requires_grad(false));
}

TEST_CASE("backward of sum(x*y) gives the other factor") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}).set_requires_grad(true);
  Tensor y = Tensor::from_data({3}, {4, 5, 6}).set_requires_grad(true);
  Tensor z = sum(mul(x, y));
  CHECK(z.scalar() == doctest::Approx(32.0));
  z.backward();
  CHECK(x.grad() == std::vector<double>{4, 5, 6});
  CHECK(y.grad() == std::vector<double>{1, 2, 3});
}

TEST_CASE("gradients accumulate across repeated use") {
  Tensor x = Tensor::from_data({2}, {3, 4}).set_requires_grad(true);
  Tensor y = sum(add(x, x));
  y.backward();
  CHECK(x.grad() == std::vector<double>{2, 2});

  // Second backward without zero_grad accumulates further.
  Tensor y2 = sum(x);
  y2.backward();
  CHECK(x.grad() == std::vector<double>{3, 3});
  x.zero_grad();
  CHECK(x.grad() == std::vector<double>{0, 0});
}

TEST_CASE("backward requires a scalar with a gradient path") {
  Tensor x = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
  CHECK_THROWS_AS(mul(x, x).backward(), ShapeError);
  Tensor c = Tensor::from_data({1}, {5});
  CHECK_THROWS(c.backward());
}

TEST_CASE("NoGradGuard suppresses tape recording") {
  Tensor x = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
  NoGradGuard ng;
  Tensor y = sum(mul(x, x));
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("finite checks flag NaN results") {
  bool saved = finite_checks();
  set_finite_checks(true);
  Tensor x = Tensor::from_data({1}, {-1.0});
  CHECK_THROWS_AS(log_val(x), NumericError);
  set_finite_checks(false);
  Tensor y = log_val(x);
  CHECK(std::isnan(y.scalar()));
  set_finite_checks(saved);
}

TEST_CASE("matmul basics") {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from_data({3, 1}, {1, 1, 1});
  Tensor y = matmul(a, b);
  CHECK(y.shape() == Shape{2, 1});

  Tensor a2 = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor ones = Tensor::from_data({2, 1}, {1, 1});
  Tensor r = matmul(a2, ones);
  CHECK(r.values() == std::vector<double>{3, 7});

  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor same = matmul(a2, eye);
  CHECK(same.values() == a2.values());
}

TEST_CASE("matmul batched against per-slice products") {
  Rng rng(77);
  Tensor a = rand_tensor({3, 2, 4}, rng);
  Tensor b = rand_tensor({3, 4, 5}, rng);
  Tensor y = matmul(a, b);
  CHECK(y.shape() == Shape{3, 2, 5});
  for (std::size_t t = 0; t < 3; ++t) {
    Tensor as = slice(a, 0, t, 1);
    Tensor bs = slice(b, 0, t, 1);
    Tensor ys = matmul(reshape(as, {2, 4}), reshape(bs, {4, 5}));
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(y.values()[t * 10 + i] == doctest::Approx(ys.values()[i]).epsilon(1e-12));
    }
  }

  // Shared 2-D rhs broadcasts across the batch.
  Tensor w = rand_tensor({4, 5}, rng);
  Tensor yw = matmul(a, w);
  Tensor y0 = matmul(reshape(slice(a, 0, 1, 1), {2, 4}), w);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(yw.values()[10 + i] == doctest::Approx(y0.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul dimension errors name both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("softmax values") {
  Tensor u = Tensor::from_data({4}, {0.7, 0.7, 0.7, 0.7});
  Tensor y = softmax(u, 0);
  for (double v : y.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  Tensor x = Tensor::from_data({3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
  Tensor s = softmax(x, 0);
  CHECK(s.values()[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  CHECK(s.values()[1] == doctest::Approx(2.0 / 6.0).epsilon(1e-14));
  CHECK(s.values()[2] == doctest::Approx(3.0 / 6.0).epsilon(1e-14));

  // Max subtraction keeps large logits finite.
  Tensor big = Tensor::from_data({2}, {1000.0, 0.0});
  Tensor sb = softmax(big, 0);
  CHECK(sb.values()[0] == doctest::Approx(1.0));
  CHECK(sb.values()[1] == 0.0);
}

TEST_CASE("softmax rows sum to one for random inputs") {
  for (int s = 0; s < 50; ++s) {
    Rng rng(1000 + s);
    Tensor x = rand_tensor({3, 5, 2}, rng, -8.0, 8.0);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      Tensor y = softmax(x, axis);
      // Sum over the softmax axis must be 1 everywhere.
      std::size_t outer = 1, inner = 1;
      Shape sh = x.shape();
      for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
      for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          double acc = 0.0;
          for (std::size_t e = 0; e < sh[axis]; ++e) {
            acc += y.values()[o * sh[axis] * inner + e * inner + in];
          }
          CHECK(acc == doctest::Approx(1.0).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("conv2d identity and averaging kernels") {
  Rng rng(5);
  Tensor x = rand_tensor({1, 1, 4, 5}, rng);
  Tensor k1 = Tensor::from_data({1, 1, 1, 1}, {1.0});
  Tensor y = conv2d(x, k1, 1, 0);
  CHECK(y.values() == x.values());

  Tensor c = Tensor::full({1, 1, 6, 6}, 2.5);
  Tensor avg = Tensor::full({1, 1, 3, 3}, 1.0 / 9.0);
  Tensor ya = conv2d(c, avg, 1, 0);
  CHECK(ya.shape() == Shape{1, 1, 4, 4});
  for (double v : ya.values()) CHECK(v == doctest::Approx(2.5).epsilon(1e-14));
}

TEST_CASE("conv2d against direct correlation oracle") {
  Rng rng(42);
  Tensor x = rand_tensor({2, 3, 5, 6}, rng);
  Tensor k = rand_tensor({4, 3, 3, 3}, rng);
  for (std::size_t stride : {std::size_t{1}, std::size_t{2}}) {
    for (std::size_t pad : {std::size_t{0}, std::size_t{1}}) {
      Tensor y = conv2d(x, k, stride, pad);
      std::size_t OH = (5 + 2 * pad - 3) / stride + 1;
      std::size_t OW = (6 + 2 * pad - 3) / stride + 1;
      REQUIRE(y.shape() == Shape{2, 4, OH, OW});
      // Independent scalar implementation.
      for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t o = 0; o < 4; ++o) {
          for (std::size_t i = 0; i < OH; ++i) {
            for (std::size_t j = 0; j < OW; ++j) {
              double acc = 0.0;
              for (std::size_t cc = 0; cc < 3; ++cc) {
                for (std::size_t u = 0; u < 3; ++u) {
                  for (std::size_t v = 0; v < 3; ++v) {
                    long ih = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                    long iw = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                    if (ih < 0 || ih >= 5 || iw < 0 || iw >= 6) continue;
                    acc += x.values()[((n * 3 + cc) * 5 + ih) * 6 + iw] *
                           k.values()[((o * 3 + cc) * 3 + u) * 3 + v];
                  }
                }
              }
              double got = y.values()[((n * 4 + o) * OH + i) * OW + j];
              CHECK(got == doctest::Approx(acc).epsilon(1e-12));
            }
          }
        }
      }
    }
  }
}

TEST_CASE("conv2d zero-extent output is a configuration error") {
  Tensor x = Tensor::zeros({1, 1, 2, 2});
  Tensor k = Tensor::zeros({1, 1, 5, 5});
  CHECK_THROWS_AS(conv2d(x, k, 1, 0), ConfigError);
  CHECK_THROWS_AS(conv2d(x, k, 0, 0), ConfigError);
}

TEST_CASE("resize_bilinear fixed points") {
  Rng rng(9);
  Tensor x = rand_tensor({2, 3, 4, 5}, rng);
  Tensor same = resize_bilinear(x, 4, 5);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same.values()[i] == x.values()[i]);

  Tensor c = Tensor::full({1, 1, 3, 3}, 1.25);
  Tensor up = resize_bilinear(c, 7, 11);
  for (double v : up.values()) CHECK(v == 1.25);
}

TEST_CASE("resize_bilinear matches scalar oracle") {
  // Independent half-pixel-center interpolation of one plane.
  auto oracle = [](const std::vector<double>& src, std::size_t h, std::size_t w,
                   std::size_t oh, std::size_t ow, std::size_t i, std::size_t j) {
    auto sample = [&](double sy, double sx) {
      sy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
      sx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
      std::size_t y0 = std::min(static_cast<std::size_t>(sy), h - (h > 1 ? 2 : 1));
      std::size_t x0 = std::min(static_cast<std::size_t>(sx), w - (w > 1 ? 2 : 1));
      std::size_t y1 = h > 1 ? y0 + 1 : y0;
      std::size_t x1 = w > 1 ? x0 + 1 : x0;
      double fy = h > 1 ? sy - static_cast<double>(y0) : 0.0;
      double fx = w > 1 ? sx - static_cast<double>(x0) : 0.0;
      double a = src[y0 * w + x0] * (1 - fx) + src[y0 * w + x1] * fx;
      double b = src[y1 * w + x0] * (1 - fx) + src[y1 * w + x1] * fx;
      return a * (1 - fy) + b * fy;
    };
    double sy = (i + 0.5) * static_cast<double>(h) / oh - 0.5;
    double sx = (j + 0.5) * static_cast<double>(w) / ow - 0.5;
    return sample(sy, sx);
  };

  std::vector<double> src = {1.0, 2.0, 3.0, 5.0};
  Tensor x = Tensor::from_data({1, 1, 2, 2}, src);
  Tensor y = resize_bilinear(x, 4, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(y.values()[i * 4 + j] ==
            doctest::Approx(oracle(src, 2, 2, 4, 4, i, j)).epsilon(1e-14));
    }
  }

  Rng rng(31);
  Tensor big = rand_tensor({1, 1, 5, 7}, rng);
  Tensor down = resize_bilinear(big, 3, 4);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(down.values()[i * 4 + j] ==
            doctest::Approx(oracle(big.values(), 5, 7, 3, 4, i, j)).epsilon(1e-12));
    }
  }
}

TEST_CASE("layernorm closed forms") {
  Tensor g = Tensor::from_data({2}, {1, 1});
  Tensor b = Tensor::from_data({2}, {0, 0});
  Tensor c = Tensor::from_data({3, 2}, {4, 4, -1, -1, 0.5, 0.5});
  Tensor yc = layernorm(c, 1, g, b);
  for (double v : yc.values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

  Tensor x = Tensor::from_data({1, 2}, {1, 3});
  Tensor y = layernorm(x, 1, g, b);
  // mean 2, population variance 1: normalized to +-1 up to eps.
  CHECK(y.values()[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y.values()[1] == doctest::Approx(1.0).epsilon(1e-5));
  double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y.values()[1] == doctest::Approx(expect).epsilon(1e-14));

  Tensor gs = Tensor::from_data({2}, {2, 3});
  Tensor bs = Tensor::from_data({2}, {5, -1});
  Tensor ys = layernorm(x, 1, gs, bs);
  CHECK(ys.values()[0] == doctest::Approx(5.0 - 2.0 * expect).epsilon(1e-12));
  CHECK(ys.values()[1] == doctest::Approx(-1.0 + 3.0 * expect).epsilon(1e-12));
}

TEST_CASE("check_gradients closed-form cases") {
  Tensor x = Tensor::from_data({2}, {1, 2});
  auto rep = check_gradients([](const Tensor& t) { return sum(t); }, x);
  CHECK(rep.passed);
  CHECK(rep.max_rel_error < 1e-9);

  Tensor x2 = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
  Tensor y = sum(mul(x2, x2));
  y.backward();
  CHECK(x2.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(x2.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));

  CHECK_THROWS_AS(
      check_gradients([](const Tensor& t) { return log_val(sum(t)); },
                      Tensor::from_data({1}, {-3.0})),
      NumericError);
}

TEST_CASE("finite differences validate every differentiable op") {
  const int seeds = 50;

  fd_suite("add", seeds, [](Rng& r) { return rand_tensor({2, 3}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             Tensor b = rand_tensor({2, 3}, r2);
             return weighted(add(x, b), r2);
           });
  fd_suite("sub_rhs", seeds, [](Rng& r) { return rand_tensor({2, 3}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             Tensor a = rand_tensor({2, 3}, r2);
             return weighted(sub(a, x), r2);
           });
  fd_suite("mul_scalar_operand", seeds, [](Rng& r) { return rand_tensor({1}, r, 0.5, 2.0); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             Tensor a = rand_tensor({2, 3}, r2);
             return weighted(mul(a, x), r2);
           });
  fd_suite("divide", seeds, [](Rng& r) { return rand_tensor({2, 3}, r, 0.5, 2.0); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             Tensor a = rand_tensor({2, 3}, r2);
             return weighted(divide(a, x), r2);
           });
  fd_suite("abs", seeds,
           [](Rng& r) {
             Tensor t = rand_tensor({3, 3}, r, 0.2, 1.0);
             // random signs, bounded away from the kink
             Rng r2 = r.fork(9);
             auto& v = t.mutable_values();
             for (double& d : v) {
               if (r2.uniform01() < 0.5) d = -d;
             }
             return t;
           },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             return weighted(abs_val(x), r2);
           });
  fd_suite("exp", seeds, [](Rng& r) { return rand_tensor({2, 2}, r, -2.0, 2.0); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             return weighted(exp_val(x), r2);
           });
  fd_suite("log", seeds, [](Rng& r) { return rand_tensor({2, 2}, r, 0.3, 3.0); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             return weighted(log_val(x), r2);
           });
  fd_suite("sqrt", seeds, [](Rng& r) { return rand_tensor({2, 2}, r, 0.3, 3.0); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             return weighted(sqrt_val(x), r2);
           });
  fd_suite("relu", seeds,
           [](Rng& r) {
             Tensor t = rand_tensor({3, 3}, r, 0.2, 1.0);
             Rng r2 = r.fork(9);
             auto& v = t.mutable_values();
             for (double& d : v) {
               if (r2.uniform01() < 0.5) d = -d;
             }
             return t;
           },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             return weighted(relu(x), r2);
           });
  fd_suite("gelu", seeds, [](Rng& r) { return rand_tensor({2, 3}, r, -2.0, 2.0); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             return weighted(gelu(x), r2);
           });
  fd_suite("softplus", seeds, [](Rng& r) { return rand_tensor({2, 3}, r, -4.0, 4.0); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             return weighted(softplus(x), r2);
           });
  fd_suite("mean", seeds, [](Rng& r) { return rand_tensor({3, 4}, r); },
           [](const Tensor& x, Rng&) { return mean(x); });
  fd_suite("broadcast_add_rhs", seeds, [](Rng& r) { return rand_tensor({3, 2}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             Tensor a = rand_tensor({4, 3, 2}, r2);
             return weighted(broadcast_add(a, x), r2);
           });
  fd_suite("add_channel_bias", seeds, [](Rng& r) { return rand_tensor({3}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             Tensor a = rand_tensor({2, 3, 2, 2}, r2);
             return weighted(add_channel_bias(a, x), r2);
           });
  fd_suite("reshape_permute", seeds, [](Rng& r) { return rand_tensor({2, 3, 4}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             return weighted(reshape(permute(x, {2, 0, 1}), {4, 6}), r2);
           });
  fd_suite("slice_concat", seeds, [](Rng& r) { return rand_tensor({4, 3}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             Tensor top = slice(x, 0, 0, 2);
             Tensor bottom = slice(x, 0, 2, 2);
             return weighted(concat({bottom, top}, 0), r2);
           });
  fd_suite("index_select0", seeds, [](Rng& r) { return rand_tensor({4, 2}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             return weighted(index_select0(x, {3, 1, 1, 0}), r2);
           });
  fd_suite("downsample2", seeds, [](Rng& r) { return rand_tensor({1, 2, 5, 6}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             return weighted(downsample2(x), r2);
           });
  fd_suite("matmul_lhs", seeds, [](Rng& r) { return rand_tensor({2, 3, 4}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             Tensor b = rand_tensor({2, 4, 2}, r2);
             return weighted(matmul(x, b), r2);
           });
  fd_suite("matmul_shared_rhs", seeds, [](Rng& r) { return rand_tensor({4, 3}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             Tensor a = rand_tensor({2, 2, 4}, r2);
             return weighted(matmul(a, x), r2);
           });
  fd_suite("linear", seeds, [](Rng& r) { return rand_tensor({3, 4}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             Tensor w = rand_tensor({4, 2}, r2);
             Tensor b = rand_tensor({2}, r2);
             return weighted(linear(x, w, b), r2);
           });
  fd_suite("softmax_mid_axis", seeds, [](Rng& r) { return rand_tensor({2, 4, 3}, r, -3.0, 3.0); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             return weighted(softmax(x, 1), r2);
           });
  fd_suite("conv2d_input", seeds, [](Rng& r) { return rand_tensor({1, 2, 5, 5}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             Tensor k = rand_tensor({3, 2, 3, 3}, r2);
             return weighted(conv2d(x, k, 2, 1), r2);
           });
  fd_suite("conv2d_kernel", seeds, [](Rng& r) { return rand_tensor({2, 2, 3, 3}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             Tensor img = rand_tensor({1, 2, 6, 5}, r2);
             return weighted(conv2d(img, x, 1, 1), r2);
           });
  fd_suite("resize_up", seeds, [](Rng& r) { return rand_tensor({1, 2, 3, 4}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             return weighted(resize_bilinear(x, 6, 8), r2);
           });
  fd_suite("resize_down", seeds, [](Rng& r) { return rand_tensor({1, 1, 6, 7}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             return weighted(resize_bilinear(x, 3, 3), r2);
           });
  fd_suite("layernorm_x", seeds, [](Rng& r) { return rand_tensor({3, 4}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             Tensor g = rand_tensor({4}, r2, 0.5, 1.5);
             Tensor b = rand_tensor({4}, r2);
             return weighted(layernorm(x, 1, g, b), r2);
           });
  fd_suite("layernorm_gamma", seeds, [](Rng& r) { return rand_tensor({4}, r, 0.5, 1.5); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             Tensor in = rand_tensor({3, 4}, r2);
             Tensor b = rand_tensor({4}, r2);
             return weighted(layernorm(in, 1, x, b), r2);
           });
  fd_suite("layernorm_beta", seeds, [](Rng& r) { return rand_tensor({4}, r); },
           [](const Tensor& x, Rng& r) {
             Rng r2 = r;
             Tensor in = rand_tensor({3, 4}, r2);
             Tensor g = rand_tensor({4}, r2, 0.5, 1.5);
             return weighted(layernorm(in, 1, g, x), r2);
           });
}

TEST_CASE("rng determinism and distribution sanity") {
  Rng a(1234);
  Rng b(1234);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(1234);
  Rng d(5678);
  int same = 0;
  for (int i = 0; i < 100; ++i) {
    if (c.next_u64() == d.next_u64()) ++same;
  }
  CHECK(same == 0);

  Rng e(9);
  double mn = 1.0, mx = 0.0, acc = 0.0;
  for (int i = 0; i < 10000; ++i) {
    double v = e.uniform01();
    mn = std::min(mn, v);
    mx = std::max(mx, v);
    acc += v;
  }
  CHECK(mn >= 0.0);
  CHECK(mx < 1.0);
  CHECK(acc / 10000.0 == doctest::Approx(0.5).epsilon(0.05));

  // Forked streams are independent of parent's later draws.
  Rng p1(42);
  Rng f1 = p1.fork(3);
  Rng p2(42);
  (void)p2.uniform01();
  Rng f2 = p2.fork(3);
  CHECK(f1.next_u64() != f2.next_u64());  // fork depends on parent state
  Rng p3(42);
  Rng f3 = p3.fork(3);
  Rng p4(42);
  Rng f4 = p4.fork(3);
  for (int i = 0; i < 100; ++i) CHECK(f3.next_u64() == f4.next_u64());
}
