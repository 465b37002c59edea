#include <gtest/gtest.h>

#include "allmargin/margin.hpp"

using namespace allmargin;
using namespace allmargin::margin;
using network::Network;
using network::Tensor;

namespace {

Network linear_binary(double w0, double w1) {
  return Network({2, 1}, network::Activation::tanh, {Tensor::matrix(1, 2, {w0, w1})});
}

std::vector<double> unit_point(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  const double s = norm2(x);
  for (double& v : x) v /= s;
  return x;
}

MarginProblem linear_only() {
  MarginProblem p;
  p.placement = Placement::linear_only;
  return p;
}

void expect_certified(const Network& net, std::span<const double> x, std::size_t y, const MarginResult& r,
                      ScaleMode mode = ScaleMode::pre_scale) {
  ASSERT_TRUE(r.feasible_delta.has_value());
  EXPECT_FALSE(network::forward_perturb(net, x, y, *r.feasible_delta, mode).correct);
  EXPECT_DOUBLE_EQ(network::gnorm(*r.feasible_delta), r.value);
}

}  // namespace

TEST(EstimateMargin, LinearExample) {
  auto net = linear_binary(0.6, 0.8);
  std::vector<double> x{0.6, 0.8};
  auto r = estimate_margin(net, x, 1);
  EXPECT_EQ(r.kind, MarginKind::pga_upper_estimate);
  EXPECT_NEAR(r.value, 1.0, 1e-3);
  EXPECT_GE(r.value, 1.0);
  expect_certified(net, x, 1, r);
}

TEST(EstimateMargin, MisclassifiedIsZero) {
  auto net = linear_binary(0.6, 0.8);
  std::vector<double> x{0.6, 0.8};
  auto r = estimate_margin(net, x, 0);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.iterations, 0);
  expect_certified(net, x, 0, r);
}

TEST(EstimateMargin, MatchesExactLinearMulticlass) {
  Rng rng(31);
  for (int t = 0; t < 20; ++t) {
    auto net = network::init_network({3, 4}, network::Activation::tanh, 300 + t);
    auto x = unit_point(rng, 3);
    const std::size_t y = network::forward_trace(net, x, 0).predicted;
    for (ScaleMode mode : {ScaleMode::pre_scale, ScaleMode::post_scale}) {
      MarginProblem p;
      p.scale = mode;
      auto exact = exact_linear_margin(net, x, y, p);
      auto est = estimate_margin(net, x, y, p);
      EXPECT_NEAR(est.value, exact.value, 1e-3 * exact.value);
      EXPECT_FALSE(network::forward_perturb(net, x, y, *exact.feasible_delta, mode).correct);
      expect_certified(net, x, y, est, mode);
    }
  }
}

TEST(EstimateMargin, ExactLinearClosedForm) {
  auto net = linear_binary(0.6, 0.8);
  std::vector<double> x{1.2, 1.6};
  EXPECT_DOUBLE_EQ(exact_linear_margin(net, x, 1).value, 1.0);
  MarginProblem p;
  p.norm = NormSpec{{2.0}, 2.0};
  EXPECT_DOUBLE_EQ(exact_linear_margin(net, x, 1, p).value, 0.5);
}

TEST(EstimateMargin, DoublingAlphaDoublesValue) {
  Rng rng(8);
  for (int t = 0; t < 5; ++t) {
    auto net = network::init_network({2, 3, 2}, network::Activation::tanh, 40 + t);
    auto x = unit_point(rng, 2);
    const std::size_t y = network::forward_trace(net, x, 0).predicted;
    MarginProblem p;
    p.norm = NormSpec{{0.5, 1.5, 1.0}, 3.0};
    auto a = estimate_margin(net, x, y, p);
    for (double& v : p.norm->alpha) v *= 2.0;
    auto b = estimate_margin(net, x, y, p);
    EXPECT_EQ(b.value, 2.0 * a.value);
  }
}

TEST(EstimateMargin, CertificateHoldsForEveryPlacement) {
  Rng rng(17);
  auto net = network::init_network({3, 4, 4, 2}, network::Activation::softplus, 17);
  auto x = unit_point(rng, 3);
  const std::size_t y = network::forward_trace(net, x, 0).predicted;
  for (Placement pl : {Placement::all_layers, Placement::linear_only, Placement::post_block})
    for (ScaleMode mode : {ScaleMode::pre_scale, ScaleMode::post_scale}) {
      MarginProblem p;
      p.placement = pl;
      p.scale = mode;
      auto r = estimate_margin(net, x, y, p);
      EXPECT_GT(r.value, 0.0);
      expect_certified(net, x, y, r, mode);
    }
}

TEST(EstimateMargin, UnboundedAtBudget) {
  auto net = linear_binary(0.6, 0.8);
  std::vector<double> x{0.6, 0.8};
  SolverConfig cfg;
  cfg.ascent_steps = 2;
  cfg.ascent_rate = 1e-6;
  cfg.ascent_growth = 1.0;
  cfg.restarts = 1;
  auto r = estimate_margin(net, x, 1, {}, cfg);
  EXPECT_EQ(r.kind, MarginKind::unbounded_at_budget);
  EXPECT_GT(r.largest_norm_tried, 0.0);
  EXPECT_FALSE(r.feasible_delta.has_value());
}

TEST(EstimateMargin, RejectsBadConfig) {
  auto net = linear_binary(0.6, 0.8);
  std::vector<double> x{0.6, 0.8};
  SolverConfig cfg;
  cfg.bisection_tolerance = 0.0;
  EXPECT_THROW(estimate_margin(net, x, 1, {}, cfg), Error);
}

TEST(EstimateMargins, ThreadCountDoesNotChangeResults) {
  Rng rng(2);
  auto net = network::init_network({2, 5, 3}, network::Activation::tanh, 5);
  std::vector<std::vector<double>> xs;
  std::vector<std::size_t> ys;
  for (int i = 0; i < 8; ++i) {
    xs.push_back(unit_point(rng, 2));
    ys.push_back(rng.index(3));
  }
  auto a = estimate_margins(net, xs, ys, {}, {}, 1);
  auto b = estimate_margins(net, xs, ys, {}, {}, 3);
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_EQ(a[i].value, b[i].value);
}

TEST(BruteForce, LinearExample) {
  auto net = linear_binary(0.6, 0.8);
  std::vector<double> x{0.6, 0.8};
  GridSpec g;
  g.radius = 2.0;
  g.resolution = 0.01;
  auto r = brute_force_margin(net, x, 1, {}, g);
  EXPECT_NEAR(r.value, 1.0, 0.01);
  expect_certified(net, x, 1, r);
}

TEST(BruteForce, MisclassifiedIsZero) {
  auto net = linear_binary(0.6, 0.8);
  std::vector<double> x{0.6, 0.8};
  EXPECT_EQ(brute_force_margin(net, x, 0).value, 0.0);
}

TEST(BruteForce, RefusesLargeDimension) {
  auto net = network::init_network({2, 4, 3}, network::Activation::tanh, 1);
  std::vector<double> x{0.6, 0.8};
  try {
    brute_force_margin(net, x, 0, linear_only());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_too_large);
  }
}

TEST(BruteForce, EstimateWithinFivePercent) {
  Rng rng(123);
  for (int t = 0; t < 6; ++t) {
    auto net = network::init_network({2, 2, 2}, network::Activation::tanh, 1000 + t);
    auto x = unit_point(rng, 2);
    const std::size_t y = network::forward_trace(net, x, 0).predicted;
    auto bf = brute_force_margin(net, x, y, linear_only());
    auto est = estimate_margin(net, x, y, linear_only());
    expect_certified(net, x, y, bf);
    EXPECT_LE(est.value, bf.value + bf.slack);
    EXPECT_NEAR(est.value, bf.value, 0.05 * bf.value);
  }
}

TEST(LipschitzGap, IdenticalNets) {
  Rng rng(4);
  auto net = network::init_network({2, 2, 2}, network::Activation::tanh, 9);
  std::vector<std::vector<double>> xs{unit_point(rng, 2), unit_point(rng, 2)};
  std::vector<std::size_t> ys{0, 1};
  auto rep = margin_lipschitz_gap(net, net, xs, ys, linear_only());
  EXPECT_EQ(rep.rhs, 0.0);
  for (double g : rep.gap) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(rep.violations, 0u);
}

TEST(LipschitzGap, LinearPairsExact) {
  Rng rng(14);
  for (int t = 0; t < 50; ++t) {
    auto a = linear_binary(rng.normal(), rng.normal());
    auto b = linear_binary(a.weight(1)[0] + 0.3 * rng.normal(), a.weight(1)[1] + 0.3 * rng.normal());
    std::vector<std::vector<double>> xs{unit_point(rng, 2)};
    std::vector<std::size_t> ys{rng.index(2)};
    auto rep = margin_lipschitz_gap(a, b, xs, ys);
    EXPECT_TRUE(rep.exact);
    const double dw = std::hypot(a.weight(1)[0] - b.weight(1)[0], a.weight(1)[1] - b.weight(1)[1]);
    EXPECT_NEAR(rep.rhs, dw, 1e-12);
    EXPECT_LE(rep.gap[0], dw + 1e-9);
    EXPECT_EQ(rep.violations, 0u);
  }
}

TEST(LipschitzGap, ArchitectureMismatch) {
  auto a = network::init_network({2, 2, 2}, network::Activation::tanh, 1);
  auto b = network::init_network({2, 3, 2}, network::Activation::tanh, 1);
  std::vector<std::vector<double>> xs{{0.6, 0.8}};
  std::vector<std::size_t> ys{0};
  EXPECT_THROW(margin_lipschitz_gap(a, b, xs, ys), Error);
}

TEST(AdversarialMargin, RadiusZeroEqualsEstimate) {
  Rng rng(3);
  auto net = network::init_network({2, 3, 2}, network::Activation::tanh, 3);
  auto x = unit_point(rng, 2);
  const std::size_t y = network::forward_trace(net, x, 0).predicted;
  AttackSpec ball;
  auto adv = adversarial_margin(net, x, y, ball);
  EXPECT_EQ(adv.value, estimate_margin(net, x, y).value);
}

TEST(AdversarialMargin, MisclassifiedInsideBallIsZero) {
  auto net = linear_binary(1.0, 0.0);
  std::vector<double> x{0.05, 0.99};
  AttackSpec ball;
  ball.radius = 0.1;
  auto r = adversarial_margin(net, x, 1, ball);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_FALSE(network::forward_trace(net, r.input, 1).correct);
}

TEST(AdversarialMargin, BelowCleanMargin) {
  Rng rng(6);
  for (int t = 0; t < 5; ++t) {
    auto net = network::init_network({2, 4, 2}, network::Activation::tanh, 60 + t);
    auto x = unit_point(rng, 2);
    const std::size_t y = network::forward_trace(net, x, 0).predicted;
    AttackSpec ball;
    ball.radius = 0.05;
    ball.steps = 5;
    ball.restarts = 2;
    auto adv = adversarial_margin(net, x, y, ball);
    EXPECT_LE(adv.value, estimate_margin(net, x, y).value);
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_GE(adv.input[i], x[i] - 0.05);
      EXPECT_LE(adv.input[i], x[i] + 0.05);
    }
  }
}

// Normalized linear worst case: min over the box of max{0, y w.x'} / ||x'||,
// by dense enumeration of the box.
TEST(AdversarialMargin, LinearInfinityBall) {
  Rng rng(19);
  for (int t = 0; t < 10; ++t) {
    auto net = linear_binary(rng.normal(), rng.normal());
    auto x = unit_point(rng, 2);
    const std::size_t y = network::forward_trace(net, x, 0).predicted;
    const double eps = 0.05;
    const double sgn = y == 1 ? 1.0 : -1.0;
    double oracle = kInfinity;
    const int n = 2000;
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j <= n; ++j) {
        const double a = x[0] - eps + 2 * eps * i / n, b = x[1] - eps + 2 * eps * j / n;
        const double v = std::max(0.0, sgn * (net.weight(1)[0] * a + net.weight(1)[1] * b)) / std::hypot(a, b);
        oracle = std::min(oracle, v);
      }
    AttackSpec ball;
    ball.radius = eps;
    ball.steps = 20;
    ball.restarts = 1;
    auto adv = adversarial_margin(net, x, y, ball);
    EXPECT_NEAR(adv.value, oracle, 1e-3) << "trial " << t;
  }
}
