#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "micronas/autodiff/grad_check.hpp"
#include "micronas/autodiff/ops.hpp"
#include "micronas/errors.hpp"
#include "oracles.hpp"

using namespace micronas;
using namespace micronas::ad;

namespace {

std::vector<double> randn(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

Tensor param(const Shape& s, std::mt19937_64& rng, double scale = 1.0) {
  return Tensor::from(s, randn(static_cast<std::size_t>(s.numel()), rng, scale), true);
}

// sum(y * r) for a fixed random r, so every output entry carries gradient
Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  auto r = randn(static_cast<std::size_t>(y.numel()), rng);
  return dot_constant(y, r);
}

}  // namespace

TEST(Shape, Validation) {
  EXPECT_THROW(Shape({}), ShapeError);
  EXPECT_THROW(Shape({2, 0}), ShapeError);
  EXPECT_THROW(Shape({2}, 16), ShapeError);
  Shape s({2, 3, 4}, 8);
  EXPECT_EQ(s.numel(), 24);
  EXPECT_EQ(s.element_bits(), 8);
  EXPECT_THROW(Tensor::from(Shape{3}, {1.0, 2.0}), ShapeError);
}

TEST(Backward, SumGivesOnes) {
  auto x = Tensor::from(Shape{2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, MaxSubgradientGoesToLargerThenFirst) {
  auto a = Tensor::scalar(3.0, true);
  auto b = Tensor::scalar(1.0, true);
  backward(maximum({a, b}));
  EXPECT_EQ(a.grad()[0], 1.0);
  EXPECT_EQ(b.grad()[0], 0.0);
  auto c = Tensor::scalar(2.0, true);
  auto d = Tensor::scalar(2.0, true);
  backward(maximum({c, d}));
  EXPECT_EQ(c.grad()[0], 1.0);
  EXPECT_EQ(d.grad()[0], 0.0);
}

TEST(Backward, NonScalarThrows) {
  auto x = Tensor::from(Shape{2}, {1, 2}, true);
  EXPECT_THROW(backward(x), ShapeError);
}

TEST(Backward, LeafGradsAccumulateUntilReset) {
  auto x = Tensor::from(Shape{2}, {1, 2}, true);
  auto loss = sum(scale(x, 3.0));
  backward(loss);
  backward(loss);
  EXPECT_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  backward(loss);
  EXPECT_EQ(x.grad()[1], 3.0);
}

TEST(Backward, SharedSubexpression) {
  // f = (x*x) + x*x*... through a diamond: y = x*x; f = sum(y + y*y)
  auto x = Tensor::from(Shape{3}, {0.5, -1.0, 2.0}, true);
  auto y = mul(x, x);
  backward(sum(add(y, mul(y, y))));
  const auto g = x.grad();
  const double xs[] = {0.5, -1.0, 2.0};
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(g[i], 2 * xs[i] + 4 * std::pow(xs[i], 3), 1e-12);
}

TEST(Numeric, NonFiniteIsAnError) {
  auto x = Tensor::from(Shape{1}, {1e308}, true);
  EXPECT_THROW(scale(x, 1e10), NumericError);
}

TEST(Relu, ValuesAndZeroGradientAtKink) {
  auto x = Tensor::from(Shape{3}, {-1.0, 0.0, 2.0}, true);
  auto y = relu(x);
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()), (std::vector<double>{0, 0, 2}));
  backward(sum(y));
  EXPECT_EQ(x.grad(), (std::vector<double>{0, 0, 1}));
}

TEST(Conv2d, IdentitySizedConv) {
  auto x = Tensor::from(Shape{1, 1, 1, 1}, {1.0});
  auto w = Tensor::from(Shape{1, 1, 1, 1}, {2.0});
  auto b = Tensor::from(Shape{1}, {0.0});
  auto y = conv2d(x, w, b, 1, Padding::Same);
  EXPECT_EQ(y.item(), 2.0);
}

TEST(Conv2d, KwsStemShape) {
  auto x = Tensor::zeros(Shape{1, 49, 10, 1});
  auto w = Tensor::zeros(Shape{10, 4, 1, 140});
  auto b = Tensor::zeros(Shape{140});
  auto y = conv2d(x, w, b, 1, Padding::Same);
  EXPECT_EQ(y.shape().dims(), (std::vector<std::int64_t>{1, 49, 10, 140}));
}

TEST(Conv2d, MatchesLoopOracle) {
  std::mt19937_64 rng(1);
  struct Case {
    int H, W, C, KH, KW, CO, stride, groups;
    bool same;
  };
  for (const Case c : {Case{5, 5, 3, 3, 3, 2, 1, 1, false}, Case{6, 5, 2, 3, 3, 4, 2, 1, true},
                       Case{7, 4, 4, 3, 2, 4, 2, 4, true}, Case{5, 6, 4, 2, 3, 6, 1, 2, true}}) {
    const int N = 2;
    auto xv = randn(static_cast<std::size_t>(N) * c.H * c.W * c.C, rng);
    auto wv = randn(static_cast<std::size_t>(c.KH) * c.KW * (c.C / c.groups) * c.CO, rng);
    auto bv = randn(c.CO, rng);
    int OH, OW;
    const auto expect =
        oracle::conv2d(xv, N, c.H, c.W, c.C, wv, c.KH, c.KW, c.CO, bv, c.stride, c.same, c.groups, OH, OW);
    auto y = conv2d(Tensor::from(Shape{N, c.H, c.W, c.C}, xv), Tensor::from(Shape{c.KH, c.KW, c.C / c.groups, c.CO}, wv),
                    Tensor::from(Shape{c.CO}, bv), c.stride, c.same ? Padding::Same : Padding::Valid, c.groups);
    ASSERT_EQ(y.shape().dims(), (std::vector<std::int64_t>{N, OH, OW, c.CO}));
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y.at(i), expect[i], 1e-6);
  }
}

TEST(Conv2d, BadGroupsThrow) {
  auto x = Tensor::zeros(Shape{1, 3, 3, 3});
  auto w = Tensor::zeros(Shape{3, 3, 1, 3});
  auto b = Tensor::zeros(Shape{3});
  EXPECT_THROW(conv2d(x, w, b, 1, Padding::Same, 2), ShapeError);
  EXPECT_THROW(conv2d(x, Tensor::zeros(Shape{3, 3, 2, 3}), b, 1, Padding::Same, 1), ShapeError);
}

TEST(Dense, IdentityAndOracle) {
  auto x = Tensor::from(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  auto eye = Tensor::from(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto y = dense(x, eye, Tensor::zeros(Shape{3}));
  for (int i = 0; i < 6; ++i) EXPECT_EQ(y.at(i), x.at(i));

  EXPECT_EQ(dense(Tensor::zeros(Shape{2, 1, 1, 196}), Tensor::zeros(Shape{196, 12}), Tensor::zeros(Shape{12}))
                .shape()
                .dims(),
            (std::vector<std::int64_t>{2, 12}));

  std::mt19937_64 rng(2);
  auto xv = randn(4 * 3, rng), wv = randn(3 * 5, rng), bv = randn(5, rng);
  auto z = dense(Tensor::from(Shape{4, 3}, xv), Tensor::from(Shape{3, 5}, wv), Tensor::from(Shape{5}, bv));
  for (int n = 0; n < 4; ++n)
    for (int o = 0; o < 5; ++o) {
      double acc = bv[o];
      for (int f = 0; f < 3; ++f) acc += xv[n * 3 + f] * wv[f * 5 + o];
      EXPECT_NEAR(z.at(n * 5 + o), acc, 1e-6);
    }
}

TEST(Pooling, KwsHeadWindowAndOracle) {
  auto y = avg_pool2d(Tensor::zeros(Shape{1, 25, 5, 7}), 25, 5, 1, Padding::Valid);
  EXPECT_EQ(y.shape().dims(), (std::vector<std::int64_t>{1, 1, 1, 7}));
  EXPECT_THROW(avg_pool2d(Tensor::zeros(Shape{1, 4, 4, 1}), 5, 5, 1, Padding::Valid), ShapeError);

  std::mt19937_64 rng(3);
  for (bool same : {false, true}) {
    auto xv = randn(2 * 7 * 6 * 3, rng);
    int OH, OW;
    const auto expect = oracle::avg_pool(xv, 2, 7, 6, 3, 3, 2, 2, same, OH, OW);
    auto p = avg_pool2d(Tensor::from(Shape{2, 7, 6, 3}, xv), 3, 2, 2, same ? Padding::Same : Padding::Valid);
    ASSERT_EQ(p.numel(), static_cast<std::int64_t>(expect.size()));
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(p.at(i), expect[i], 1e-6);
  }
  auto g = global_avg_pool(Tensor::from(Shape{1, 2, 1, 2}, {1, 10, 3, 20}));
  EXPECT_EQ(g.at(0), 2.0);
  EXPECT_EQ(g.at(1), 15.0);
}

TEST(CrossEntropy, UniformHugeAndOracle) {
  std::vector<int> labels{0, 3};
  auto u = softmax_cross_entropy(Tensor::zeros(Shape{2, 4}), labels);
  EXPECT_NEAR(u.item(), std::log(4.0), 1e-12);
  auto h = softmax_cross_entropy(Tensor::from(Shape{1, 3}, {0, 1000, 0}), std::vector<int>{1});
  EXPECT_NEAR(h.item(), 0.0, 1e-12);
  EXPECT_THROW(softmax_cross_entropy(Tensor::zeros(Shape{1, 3}), std::vector<int>{3}), ShapeError);

  std::mt19937_64 rng(4);
  auto lv = randn(5 * 4, rng, 3.0);
  std::vector<int> lab{0, 1, 2, 3, 1};
  double expect = 0.0;
  for (int n = 0; n < 5; ++n) {
    double s = 0.0;
    for (int k = 0; k < 4; ++k) s += std::exp(lv[n * 4 + k]);
    expect += std::log(s) - lv[n * 4 + lab[n]];
  }
  EXPECT_NEAR(softmax_cross_entropy(Tensor::from(Shape{5, 4}, lv), lab).item(), expect / 5, 1e-6);
}

TEST(WeightedSum, OneHotSelectsBranchExactly) {
  std::mt19937_64 rng(5);
  std::vector<Tensor> in;
  for (int k = 0; k < 3; ++k) in.push_back(Tensor::from(Shape{2, 2}, randn(4, rng)));
  auto one = weighted_sum({in[0]}, Tensor::from(Shape{1}, {1.0}));
  for (int i = 0; i < 4; ++i) EXPECT_EQ(one.at(i), in[0].at(i));
  for (int k = 0; k < 3; ++k) {
    std::vector<double> w(3, 0.0);
    w[k] = 1.0;
    auto y = weighted_sum(in, Tensor::from(Shape{3}, w));
    for (int i = 0; i < 4; ++i) EXPECT_EQ(y.at(i), in[k].at(i));
  }
  auto wv = randn(3, rng);
  auto y = weighted_sum(in, Tensor::from(Shape{3}, wv));
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(y.at(i), wv[0] * in[0].at(i) + wv[1] * in[1].at(i) + wv[2] * in[2].at(i), 1e-12);
  }
  EXPECT_THROW(weighted_sum(in, Tensor::from(Shape{2}, {0.5, 0.5})), ShapeError);
}

TEST(ChannelMask, IdentityZeroingAndTruncatedConv) {
  std::mt19937_64 rng(6);
  auto x = Tensor::from(Shape{1, 2, 2, 3}, randn(12, rng));
  auto id = channel_mask(x, 3);
  for (int i = 0; i < 12; ++i) EXPECT_EQ(id.at(i), x.at(i));
  auto m = channel_mask(x, 1);
  for (int i = 0; i < 12; ++i) EXPECT_EQ(m.at(i), i % 3 == 0 ? x.at(i) : 0.0);
  EXPECT_THROW(channel_mask(x, 0), ShapeError);
  EXPECT_THROW(channel_mask(x, 4), ShapeError);

  // masked conv == conv with only the first 2 output filters
  auto in = Tensor::from(Shape{1, 4, 4, 2}, randn(32, rng));
  auto wv = randn(3 * 3 * 2 * 5, rng);
  auto bv = randn(5, rng);
  auto full = channel_mask(conv2d(in, Tensor::from(Shape{3, 3, 2, 5}, wv), Tensor::from(Shape{5}, bv), 1, Padding::Same), 2);
  std::vector<double> wt, bt{bv[0], bv[1]};
  for (std::size_t i = 0; i < wv.size(); ++i) {
    if (i % 5 < 2) wt.push_back(wv[i]);
  }
  auto trunc = conv2d(in, Tensor::from(Shape{3, 3, 2, 2}, wt), Tensor::from(Shape{2}, bt), 1, Padding::Same);
  for (int p = 0; p < 16; ++p) {
    for (int c = 0; c < 5; ++c) {
      EXPECT_NEAR(full.at(p * 5 + c), c < 2 ? trunc.at(p * 2 + c) : 0.0, 1e-6);
    }
  }
  auto xg = Tensor::from(Shape{1, 1, 1, 3}, {1, 2, 3}, true);
  backward(sum(channel_mask(xg, 2)));
  EXPECT_EQ(xg.grad(), (std::vector<double>{1, 1, 0}));
}

TEST(FakeQuant, GridFixedPointZeroAndOracle) {
  // asymmetric 8-bit over [0, 2.55]: multiples of 0.01 are on the grid
  std::vector<double> grid;
  for (int q = 0; q <= 255; q += 5) grid.push_back(q * 0.01);
  auto g = fake_quant(Tensor::from(Shape{static_cast<std::int64_t>(grid.size())}, grid), 8, Tensor::scalar(0.0),
                      Tensor::scalar(2.55));
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_NEAR(g.at(i), grid[i], 1e-12);

  auto z = fake_quant(Tensor::scalar(0.0), 8, Tensor::scalar(-1.0), Tensor::scalar(1.0), QuantMode::Symmetric);
  EXPECT_EQ(z.item(), 0.0);
  EXPECT_THROW(fake_quant(Tensor::scalar(0.0), 8, Tensor::scalar(1.0), Tensor::scalar(1.0)), NumericError);

  std::mt19937_64 rng(7);
  for (int bits : {8, 4}) {
    auto xv = randn(200, rng, 1.5);
    // symmetric oracle
    const double r = 1.7;
    const double levels_s = (1 << (bits - 1)) - 1;
    auto ys = fake_quant(Tensor::from(Shape{200}, xv), bits, Tensor::scalar(-r), Tensor::scalar(r), QuantMode::Symmetric);
    // asymmetric oracle with zero-point nudging
    const double lo = -0.8, hi = 2.3;
    const double levels_a = (1 << bits) - 1;
    const double step = (hi - lo) / levels_a;
    const double zp = std::clamp(std::nearbyint(-lo / step), 0.0, levels_a);
    auto ya = fake_quant(Tensor::from(Shape{200}, xv), bits, Tensor::scalar(lo), Tensor::scalar(hi));
    for (int i = 0; i < 200; ++i) {
      const double qs = std::clamp(std::nearbyint(xv[i] / (r / levels_s)), -levels_s, levels_s);
      EXPECT_NEAR(ys.at(i), qs * (r / levels_s), 1e-6);
      const double qa = std::clamp(std::nearbyint(xv[i] / step) + zp, 0.0, levels_a);
      EXPECT_NEAR(ya.at(i), (qa - zp) * step, 1e-6);
    }
  }
  // round half to even: 0.5 steps go to the even neighbour
  auto h = fake_quant(Tensor::from(Shape{2}, {0.5, 1.5}), 8, Tensor::scalar(-127.0), Tensor::scalar(127.0),
                      QuantMode::Symmetric);
  EXPECT_EQ(h.at(0), 0.0);
  EXPECT_EQ(h.at(1), 2.0);
}

TEST(FakeQuant, StraightThroughGradients) {
  auto x = Tensor::from(Shape{4}, {-3.0, -0.5, 0.7, 5.0}, true);
  auto lo = Tensor::scalar(-1.0, true);
  auto hi = Tensor::scalar(1.0, true);
  backward(sum(fake_quant(x, 8, lo, hi)));
  EXPECT_EQ(x.grad(), (std::vector<double>{0, 1, 1, 0}));
  EXPECT_EQ(lo.grad()[0], 1.0);
  EXPECT_EQ(hi.grad()[0], 1.0);
}

TEST(GradCheck, LinearLayerPassesTight) {
  std::mt19937_64 rng(8);
  auto x = Tensor::from(Shape{3, 4}, randn(12, rng));
  auto w = param(Shape{4, 2}, rng);
  auto b = param(Shape{2}, rng);
  auto rep = grad_check([&] { return probe(dense(x, w, b)); }, {{"w", w}, {"b", b}}, 1e-6);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(GradCheck, ConvReluCrossEntropyStack) {
  std::mt19937_64 rng(9);
  auto x = param(Shape{2, 5, 4, 2}, rng);
  auto w1 = param(Shape{3, 3, 2, 4}, rng, 0.5);
  auto b1 = param(Shape{4}, rng, 0.1);
  auto wd = param(Shape{3, 3, 1, 4}, rng, 0.5);
  auto bd = param(Shape{4}, rng, 0.1);
  auto g = param(Shape{4}, rng);
  auto wf = param(Shape{4, 3}, rng);
  auto bf = param(Shape{3}, rng);
  std::vector<int> labels{2, 0};
  auto loss_fn = [&] {
    auto h = relu(conv2d(x, w1, b1, 2, Padding::Same));
    h = channel_scale(conv2d(h, wd, bd, 1, Padding::Same, 4), g);
    h = avg_pool2d(relu(h), 2, 2, 1, Padding::Same);
    return softmax_cross_entropy(dense(global_avg_pool(h), wf, bf), labels);
  };
  auto rep = grad_check(loss_fn, {{"x", x}, {"w1", w1}, {"b1", b1}, {"wd", wd}, {"bd", bd}, {"g", g}, {"wf", wf}, {"bf", bf}},
                        1e-4);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
  EXPECT_FALSE(rep.ste_approximate);
}

TEST(GradCheck, MixingOpsAndSoftmax) {
  std::mt19937_64 rng(10);
  auto a = param(Shape{3}, rng);
  auto x0 = param(Shape{2, 3}, rng);
  auto x1 = param(Shape{2, 3}, rng);
  auto x2 = param(Shape{2, 3}, rng);
  auto s = param(Shape{1}, rng);
  auto loss_fn = [&] {
    auto z = softmax(a, 0.7);
    auto y = weighted_sum({channel_mask(x0, 1), channel_mask(x1, 2), x2}, z);
    auto m = maximum({sum(mul(y, y)), Tensor::scalar(-5.0)});
    return add(mul_scalar(m, s), sub(sum(neg(y)), add_constant(mean(y), 1.0)));
  };
  auto rep = grad_check(loss_fn, {{"a", a}, {"x0", x0}, {"x1", x1}, {"x2", x2}, {"s", s}}, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(GradCheck, FakeQuantFlaggedAsApproximate) {
  std::mt19937_64 rng(11);
  auto x = param(Shape{6}, rng);
  auto lo = Tensor::scalar(-1.0, true);
  auto hi = Tensor::scalar(1.0, true);
  auto rep = grad_check([&] { return sum(fake_quant(x, 8, lo, hi)); }, {{"x", x}}, 1e-4);
  EXPECT_TRUE(rep.ste_approximate);
  EXPECT_FALSE(rep.passed);
}

TEST(Forward, Deterministic) {
  std::mt19937_64 r1(12), r2(12);
  auto a = conv2d(Tensor::from(Shape{1, 4, 4, 1}, randn(16, r1)), Tensor::from(Shape{3, 3, 1, 2}, randn(18, r1)),
                  Tensor::zeros(Shape{2}), 1, Padding::Same);
  auto b = conv2d(Tensor::from(Shape{1, 4, 4, 1}, randn(16, r2)), Tensor::from(Shape{3, 3, 1, 2}, randn(18, r2)),
                  Tensor::zeros(Shape{2}), 1, Padding::Same);
  for (int i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));
}
