#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "allmargin/analytic.hpp"

using namespace allmargin;
using namespace allmargin::analytic;
using network::Activation;

namespace {

Network linear_binary(double w0, double w1) {
  return Network({2, 1}, Activation::tanh, {Tensor::matrix(1, 2, {w0, w1})});
}

std::vector<double> unit_point(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  const double s = norm2(x);
  for (double& v : x) v /= s;
  return x;
}

// Plain tanh forward, one layer at a time, for the oracles below.
Eigen::VectorXd apply_layer(const Network& net, std::size_t j, const Eigen::VectorXd& h) {
  if (j % 2 == 0) return h.array().tanh().matrix();
  const Tensor& w = net.weight((j + 1) / 2);
  Eigen::MatrixXd m(w.rows(), w.cols());
  for (std::size_t a = 0; a < w.rows(); ++a)
    for (std::size_t b = 0; b < w.cols(); ++b) m(a, b) = w.at(a, b);
  return m * h;
}

struct Oracle {
  const Network& net;
  std::vector<Eigen::VectorXd> h;

  Oracle(const Network& n, const std::vector<double>& x) : net(n) {
    h.push_back(Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())));
    for (std::size_t j = 1; j <= net.k(); ++j) h.push_back(apply_layer(net, j, h.back()));
  }

  // kappa_{j<-i} from a central-difference Jacobian and a full SVD.
  double kappa(std::size_t i, std::size_t j) const {
    if (j + 1 == i) return 1.0;
    const Eigen::VectorXd& base = h[i - 1];
    const double eps = 1e-6;
    Eigen::MatrixXd jac(h[j].size(), base.size());
    for (Eigen::Index c = 0; c < base.size(); ++c) {
      Eigen::VectorXd up = base, dn = base;
      up(c) += eps;
      dn(c) -= eps;
      for (std::size_t l = i; l <= j; ++l) {
        up = apply_layer(net, l, up);
        dn = apply_layer(net, l, dn);
      }
      jac.col(c) = (up - dn) / (2 * eps);
    }
    return Eigen::JacobiSVD<Eigen::MatrixXd>(jac).singularValues()(0);
  }
  double s(std::size_t j) const { return h[j].norm(); }
};

void expect_rel(double actual, double expected, double tol) {
  EXPECT_LE(std::abs(actual - expected), tol * std::max(std::abs(expected), 1e-12)) << actual << " vs " << expected;
}

}  // namespace

TEST(KappaNN, SingleLinearLayer) {
  auto net = linear_binary(0.6, 0.8);
  std::vector<double> x{0.6, 0.8};
  auto rep = kappa_nn(net, x, 1);
  ASSERT_EQ(rep.kappa_nn.size(), 1u);
  EXPECT_NEAR(rep.gamma, 1.0, 1e-15);
  // s_(0) kappa_{1<-2} / gamma = 1, and the only psi summand is 1 / ||W||
  EXPECT_NEAR(rep.leading[0], 1.0, 1e-12);
  EXPECT_NEAR(rep.psi_sums[0][0], 0.0, 0.0);
  EXPECT_NEAR(rep.psi_sums[0][1], 1.0, 1e-12);
  EXPECT_NEAR(rep.psi_sums[0][2], 0.0, 0.0);
  EXPECT_NEAR(rep.kappa_nn[0], 2.0, 1e-12);
}

TEST(KappaNN, LeadingTermInvariantToLogitScale) {
  Rng rng(3);
  auto net = network::init_network({3, 4, 3}, Activation::tanh, 7);
  auto x = unit_point(rng, 3);
  const std::size_t y = network::forward_trace(net, x, 0).predicted;
  auto a = kappa_nn(net, x, y);
  auto scaled = net;
  for (double& v : scaled.weights().back().values()) v *= 3.5;
  auto b = kappa_nn(scaled, x, y);
  // kappa_{2r-1<-2r} is the empty Jacobian, so the last layer's term shrinks instead
  const std::size_t r = net.r();
  for (std::size_t i = 0; i + 1 < r; ++i) expect_rel(b.leading[i], a.leading[i], 1e-9);
  expect_rel(b.leading[r - 1], a.leading[r - 1] / 3.5, 1e-12);
}

TEST(KappaNN, PsiSumsMatchFiniteDifferenceOracle) {
  Rng rng(11);
  for (int t = 0; t < 5; ++t) {
    auto net = network::init_network({3, 4, 2}, Activation::tanh, 50 + t);
    auto x = unit_point(rng, 3);
    const std::size_t y = network::forward_trace(net, x, 0).predicted;
    auto rep = kappa_nn(net, x, y);
    Oracle o(net, x);
    const std::size_t r = net.r(), k = net.k();
    const double kp = net.kappa_prime();
    for (std::size_t i = 1; i <= r; ++i) {
      const double si = o.s(2 * i - 2);
      double s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (std::size_t j = i; j < r; ++j) s1 += si * o.kappa(2 * i, 2 * j) / o.s(2 * j);
      for (std::size_t j = 1; j <= 2 * i - 1; ++j)
        for (std::size_t jp = 2 * i - 1; jp <= k; ++jp)
          s2 += o.kappa(2 * i, jp) * o.kappa(j, 2 * i - 2) / o.kappa(j, jp);
      for (std::size_t j = 1; j <= k; ++j)
        for (std::size_t jp = j; jp <= k; ++jp)
          for (std::size_t jpp = std::max(2 * i, j); jpp <= jp; ++jpp)
            if (jpp % 2 == 0)
              s3 += kp * o.kappa(jpp + 1, jp) * o.kappa(2 * i, jpp - 1) * o.kappa(j, jpp - 1) * si / o.kappa(j, jp);
      expect_rel(rep.psi_sums[i - 1][0], s1, 1e-4);
      expect_rel(rep.psi_sums[i - 1][1], s2, 1e-4);
      expect_rel(rep.psi_sums[i - 1][2], s3, 1e-4);
      const double gamma = network::forward_trace(net, x, y).gamma;
      expect_rel(rep.leading[i - 1], si * o.kappa(2 * i, k) / gamma, 1e-4);
    }
  }
}

TEST(KappaNN, Errors) {
  auto relu = network::init_network({2, 3, 2}, Activation::relu, 1);
  std::vector<double> x{0.6, 0.8};
  try {
    kappa_nn(relu, x, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::requires_smooth_activation);
  }
  auto net = linear_binary(0.6, 0.8);
  try {
    kappa_nn(net, x, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::undefined_at_misclassified);
  }
}

TEST(KappaNN, LeadingTermBoundsTotal) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    auto net = network::init_network({3, 5, 4, 3}, Activation::softplus, 90 + t);
    auto x = unit_point(rng, 3);
    const std::size_t y = network::forward_trace(net, x, 0).predicted;
    auto rep = kappa_nn(net, x, y);
    for (std::size_t i = 0; i < rep.kappa_nn.size(); ++i) {
      EXPECT_GE(rep.kappa_nn[i], rep.leading[i]);
      EXPECT_TRUE(std::isfinite(rep.kappa_nn[i]));
    }
  }
}

TEST(KappaStar, SingleLayerClosedForm) {
  auto net = linear_binary(0.3, 0.4);
  std::vector<double> x{1.2, 1.6};
  auto rep = kappa_star(net, x, 1);
  const double gamma = 0.3 * 1.2 + 0.4 * 1.6;
  ASSERT_EQ(rep.kappa_star.size(), 1u);
  EXPECT_NEAR(rep.star_blocks[0][0], 8.0 * 2.0 / gamma, 1e-12);
  EXPECT_EQ(rep.star_blocks[0][1], 0.0);
  EXPECT_NEAR(rep.star_blocks[0][2], 8.0 / 0.5, 1e-12);
  EXPECT_NEAR(rep.kappa_star[0], 8.0 * 2.0 / gamma + 16.0, 1e-12);
}

TEST(KappaStar, FirstBlockVanishesAsMarginGrows) {
  std::vector<double> x{0.6, 0.8};
  double prev = kInfinity;
  for (double c : {1.0, 10.0, 100.0, 1e4}) {
    auto rep = kappa_star(linear_binary(0.6 * c, 0.8 * c), x, 1);
    EXPECT_LT(rep.star_blocks[0][0], prev);
    prev = rep.star_blocks[0][0];
  }
  EXPECT_LT(prev, 1e-3);
}

TEST(KappaStar, BlocksNonnegative) {
  Rng rng(21);
  for (int t = 0; t < 10; ++t) {
    auto net = network::init_network({2, 4, 4, 3}, Activation::tanh, 300 + t);
    auto x = unit_point(rng, 2);
    const std::size_t y = network::forward_trace(net, x, 0).predicted;
    auto rep = kappa_star(net, x, y);
    ASSERT_EQ(rep.kappa_star.size(), net.k());
    for (const auto& b : rep.star_blocks)
      for (double v : b) EXPECT_GE(v, 0.0);
  }
}

TEST(KappaStar, RejectsWrongKappaPrimeCount) {
  auto net = network::init_network({2, 3, 2}, Activation::tanh, 2);
  std::vector<double> x{0.6, 0.8};
  std::vector<double> kp{0.0, 1.0};
  const std::size_t y = network::forward_trace(net, x, 0).predicted;
  EXPECT_THROW(kappa_star(net, x, y, kp), Error);
}

TEST(KappaAdv, DominatesCleanKappa) {
  Rng rng(8);
  auto net = network::init_network({2, 4, 2}, Activation::tanh, 12);
  auto x = unit_point(rng, 2);
  const std::size_t y = network::forward_trace(net, x, 0).predicted;
  AttackSpec ball;
  ball.radius = 0.01;
  ball.steps = 3;
  ball.restarts = 2;
  auto rep = kappa_adv(net, x, y, ball);
  ASSERT_EQ(rep.kappa_adv.size(), net.r());
  for (std::size_t i = 0; i < net.r(); ++i) EXPECT_GE(rep.kappa_adv[i], rep.kappa_nn[i]);
}

TEST(MarginLowerBound, LinearExample) {
  auto net = linear_binary(0.6, 0.8);
  std::vector<double> x{0.6, 0.8};
  auto lb = margin_lower_bound(net, x, 1);
  EXPECT_EQ(lb.kind, margin::MarginKind::analytic_lower_bound);
  EXPECT_NEAR(lb.value, 0.5, 1e-12);
  EXPECT_LE(lb.value, margin::exact_linear_margin(net, x, 1).value);
  EXPECT_EQ(margin_lower_bound(net, x, 0).value, 0.0);
}

TEST(MarginLowerBound, BelowBruteForce) {
  Rng rng(77);
  MarginProblem linear;
  linear.placement = network::Placement::linear_only;
  for (int t = 0; t < 8; ++t) {
    auto net = network::init_network({2, 2, 2}, Activation::tanh, 700 + t);
    auto x = unit_point(rng, 2);
    const std::size_t y = network::forward_trace(net, x, 0).predicted;
    auto bf = margin::brute_force_margin(net, x, y, linear);
    EXPECT_LE(margin_lower_bound(net, x, y).value, bf.value);
    EXPECT_LE(margin_lower_bound(net, x, y, linear).value, bf.value);
  }
}

TEST(MarginLowerBound, WeightedFormBelowEstimate) {
  Rng rng(19);
  for (int t = 0; t < 5; ++t) {
    auto net = network::init_network({3, 4, 3}, Activation::softplus, 40 + t);
    auto x = unit_point(rng, 3);
    const std::size_t y = network::forward_trace(net, x, 0).predicted;
    MarginProblem p;
    p.norm = NormSpec{{1.0, kInfinity, 2.0}, 3.0};
    auto lb = margin_lower_bound(net, x, y, p);
    auto est = margin::estimate_margin(net, x, y, p);
    EXPECT_GT(lb.value, 0.0);
    EXPECT_LE(lb.value, est.value);
  }
}

TEST(MarginLowerBound, RejectsPostScale) {
  auto net = linear_binary(0.6, 0.8);
  std::vector<double> x{0.6, 0.8};
  MarginProblem p;
  p.scale = network::ScaleMode::post_scale;
  EXPECT_THROW(margin_lower_bound(net, x, 1, p), Error);
}

TEST(LayerComplexity, Examples) {
  EXPECT_EQ(layer_complexity(Tensor::zeros({2, 2}), 2), 0.0);
  auto eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  EXPECT_NEAR(layer_complexity(eye, 2), 2.0 * std::sqrt(std::log(2.0)), 1e-15);
  // Frobenius branch scales linearly
  auto w = Tensor::matrix(2, 3, {1, 0, 0, 0, 0, 0});
  auto w3 = Tensor::matrix(2, 3, {3, 0, 0, 0, 0, 0});
  const auto z = Tensor::zeros({2, 3});
  auto dense = Tensor::matrix(2, 3, {1, 1, 1, 1, 1, 1});
  EXPECT_NEAR(layer_complexity(dense, z, z, 4), std::sqrt(4.0) * std::sqrt(6.0) * std::sqrt(std::log(4.0)), 1e-12);
  EXPECT_NEAR(layer_complexity(w3, 3), 3.0 * layer_complexity(w, 3), 1e-12);
  EXPECT_THROW(layer_complexity(w, Tensor::zeros({3, 2}), z, 3), Error);
  EXPECT_THROW(layer_complexity(w, 1), Error);
}

TEST(CompositeComplexity, Examples) {
  std::vector<double> one{1.0}, c1{2.5};
  EXPECT_DOUBLE_EQ(composite_complexity(one, 2.0, c1), 2.5);
  std::vector<double> a{1.0, 1.0}, c{3.0, 4.0};
  EXPECT_DOUBLE_EQ(composite_complexity(a, 2.0, c), 7.0);
  std::vector<double> zero{0.0, 0.0};
  EXPECT_EQ(composite_complexity(a, 2.0, zero), 0.0);
  std::vector<double> frozen{1.0, kInfinity}, c_frozen{3.0, 0.0};
  EXPECT_DOUBLE_EQ(composite_complexity(frozen, 2.0, c_frozen), 3.0);
  try {
    composite_complexity(frozen, 2.0, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::frozen_layer_complexity);
  }
}

TEST(CompositeComplexity, Reports) {
  auto net = network::init_network({3, 4, 2}, Activation::tanh, 5);
  auto rep = complexity_report(net, NormSpec::uniform(3));
  ASSERT_EQ(rep.a.size(), 2u);
  EXPECT_EQ(rep.d, 4u);
  EXPECT_EQ(rep.layer_c[1], 0.0);
  EXPECT_DOUBLE_EQ(rep.c_gnorm, rep.a[0] + rep.a[1]);
}

TEST(SurrogateLoss, Identities) {
  for (double beta : {0.1, 1.0, 7.0}) {
    EXPECT_EQ(surrogate_loss(-5.0, beta), 1.0);
    EXPECT_EQ(surrogate_loss(0.0, beta), 1.0);
  }
  // independent oracle: Simpson's rule on the Gaussian density over [1, 12]
  const int n = 20000;
  const double a = 1.0, b = 12.0, h = (b - a) / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double t = a + i * h;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * std::exp(-t * t / 2.0) / std::sqrt(2.0 * std::numbers::pi);
  }
  const double tail = acc * h / 3.0;
  EXPECT_NEAR(surrogate_loss(1.0, 1.0), 2.0 * tail, 1e-9);
  EXPECT_NEAR(surrogate_loss(1.0, 1.0), 0.31731, 1e-5);
  EXPECT_THROW(surrogate_loss(1.0, 0.0), Error);
}

TEST(SurrogateLoss, MonotoneAndBounded) {
  for (double beta : {0.5, 1.0, 4.0}) {
    double prev = 2.0;
    for (int i = 0; i <= 10000; ++i) {
      const double m = -2.0 + 8.0 * i / 10000.0;
      const double v = surrogate_loss(m, beta);
      EXPECT_LE(v, prev);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      prev = v;
    }
  }
}

TEST(SurrogateLoss, SecondDifferencesScaleWithBeta) {
  // on m > 0 the curvature is at most 2 beta max_y y phi(y) < 0.49 beta
  for (double beta : {0.25, 1.0, 16.0}) {
    const double h = 1e-3 / std::sqrt(beta);
    double worst = 0.0;
    for (int i = 1; i < 5000; ++i) {
      const double m = h * (1.0 + i);
      const double d2 = surrogate_loss(m + h, beta) - 2.0 * surrogate_loss(m, beta) + surrogate_loss(m - h, beta);
      worst = std::max(worst, std::abs(d2) / (h * h));
    }
    EXPECT_LE(worst / beta, 0.49);
  }
}

TEST(SurrogateLoss, SlopeJumpsAtZero) {
  // left slope 0, right slope -sqrt(2 beta / pi): a kink, not a second-order contact
  const double beta = 1.0, h = 1e-7;
  const double right = (surrogate_loss(h, beta) - surrogate_loss(0.0, beta)) / h;
  EXPECT_NEAR(right, -std::sqrt(2.0 * beta / std::numbers::pi), 1e-6);
  EXPECT_EQ(surrogate_loss(-h, beta) - surrogate_loss(0.0, beta), 0.0);
}

TEST(OptimalAlpha, UnitExample) {
  std::vector<double> one{1.0};
  auto sol = optimal_alpha(one, one, 2);
  EXPECT_EQ(sol.alpha[0], 1.0);
  EXPECT_EQ(sol.value, 2.0);
  EXPECT_EQ(sol.upper_bound, 2.0);
  EXPECT_TRUE(sol.holds);
}

TEST(OptimalAlpha, Homogeneity) {
  std::vector<double> z{0.5, 2.0, 1.3}, b{1.1, 0.2, 3.0};
  for (int q = 1; q <= 6; ++q) {
    auto a = optimal_alpha(z, b, q);
    auto zc = z;
    for (double& v : zc) v *= 2.5;
    auto c = optimal_alpha(zc, b, q);
    expect_rel(c.upper_bound, a.upper_bound * std::pow(2.5, 2.0 * q / (q + 2.0)), 1e-12);
  }
}

TEST(OptimalAlpha, BoundHoldsAndNoBetterGridPoint) {
  Rng rng(1234);
  int violations = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = 1 + rng.index(4);
    const int q = 1 + static_cast<int>(rng.index(6));
    std::vector<double> z(k), b(k);
    for (std::size_t i = 0; i < k; ++i) {
      z[i] = std::exp(rng.uniform(-2.0, 2.0));
      b[i] = std::exp(rng.uniform(-2.0, 2.0));
    }
    auto sol = optimal_alpha(z, b, q);
    if (!sol.holds) ++violations;
    if (t % 50 != 0) continue;
    // multiplicative grid around alpha* in every coordinate and along random directions
    for (std::size_t i = 0; i < k; ++i)
      for (int g = -40; g <= 40; ++g) {
        auto a = sol.alpha;
        a[i] *= std::exp(0.05 * g);
        EXPECT_GE(alpha_objective(a, z, b, q), sol.value * (1.0 - 1e-3));
      }
    for (int d = 0; d < 200; ++d) {
      auto a = sol.alpha;
      for (double& v : a) v *= std::exp(rng.uniform(-1.0, 1.0));
      EXPECT_GE(alpha_objective(a, z, b, q), sol.value * (1.0 - 1e-3));
    }
  }
  EXPECT_EQ(violations, 0);
}

TEST(OptimalAlpha, DegenerateInput) {
  std::vector<double> z{1.0, 0.0}, b{1.0, 1.0};
  try {
    optimal_alpha(z, b, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate_input);
  }
}

namespace {

BoundInput margins_input(Theorem t, std::vector<double> m) {
  BoundInput in;
  in.theorem = t;
  in.margins = std::move(m);
  in.complexities = {1.5, 0.0, 2.5};
  return in;
}

}  // namespace

TEST(BoundReport, InfiniteMarginsLeaveZeta) {
  auto in = margins_input(Theorem::simple, std::vector<double>(10, kInfinity));
  auto rep = bound_report(in);
  EXPECT_EQ(rep.leading, 0.0);
  EXPECT_EQ(rep.total, rep.zeta);
  EXPECT_NEAR(rep.zeta, (std::log(20.0) + std::log(10.0)) / 10.0, 1e-15);
}

TEST(BoundReport, SimpleFormula) {
  std::vector<double> m{0.5, 1.0, 2.0, 4.0};
  auto rep = bound_report(margins_input(Theorem::simple, m));
  double mean = 0.0;
  for (double v : m) mean += 1.0 / (v * v) / 4.0;
  const double expect = 4.0 / 2.0 * std::sqrt(mean) * std::log(4.0) * std::log(4.0);
  expect_rel(rep.leading, expect, 1e-14);

  // duplicating the sample doubles n; recompute the formula at n = 8
  std::vector<double> m2 = m;
  m2.insert(m2.end(), m.begin(), m.end());
  auto rep2 = bound_report(margins_input(Theorem::simple, m2));
  expect_rel(rep2.leading, 4.0 / std::sqrt(8.0) * std::sqrt(mean) * std::log(8.0) * std::log(8.0), 1e-14);
  expect_rel(rep2.leading / rep.leading, std::pow(std::log(8.0) / std::log(4.0), 2) / std::sqrt(2.0), 1e-14);
}

TEST(BoundReport, GeneralFormAtQ2IsQTimesSimple) {
  std::vector<double> m{0.3, 0.7, 1.1, 2.0, 0.9};
  auto simple = bound_report(margins_input(Theorem::simple, m));
  auto in = margins_input(Theorem::compl_m_gen, m);
  in.q = 2;
  auto general = bound_report(in);
  EXPECT_DOUBLE_EQ(general.c_gnorm, simple.c_gnorm);
  expect_rel(general.leading, 2.0 * simple.leading, 1e-14);
}

TEST(BoundReport, MonotoneInMarginsAndComplexities) {
  Rng rng(4);
  for (Theorem t : {Theorem::simple, Theorem::compl_m_gen}) {
    std::vector<double> m(12);
    for (double& v : m) v = rng.uniform(0.2, 2.0);
    auto in = margins_input(t, m);
    in.q = 3;
    const double base = bound_report(in).leading;
    for (std::size_t i = 0; i < m.size(); ++i) {
      auto bumped = in;
      bumped.margins[i] *= 1.01;
      EXPECT_LT(bound_report(bumped).leading, base);
    }
  }
  BoundInput in;
  in.theorem = Theorem::nn_gen;
  in.q = 4;
  in.complexities = {1.0, 2.0};
  for (int e = 0; e < 9; ++e) in.kappas.push_back({rng.uniform(1.0, 5.0), rng.uniform(1.0, 5.0)});
  const double base = bound_report(in).leading;
  for (std::size_t i = 0; i < 2; ++i) {
    auto bumped = in;
    bumped.complexities[i] += 0.1;
    EXPECT_GT(bound_report(bumped).leading, base);
    bumped = in;
    bumped.kappas[3][i] *= 0.9;
    EXPECT_LT(bound_report(bumped).leading, base);
  }
}

TEST(BoundReport, NnGenFormula) {
  BoundInput in;
  in.theorem = Theorem::nn_gen;
  in.q = 3;
  in.confidence = 0.1;
  in.complexities = {1.0, 2.0};
  in.kappas = {{1.0, 2.0}, {3.0, 1.0}, {2.0, 2.0}};
  auto rep = bound_report(in);
  const double m1 = std::cbrt((1.0 + 27.0 + 8.0) / 3.0), m2 = std::cbrt((8.0 + 1.0 + 8.0) / 3.0);
  const double s = std::pow(m1, 2.0 / 3.0) * 1.0 + std::pow(m2 * 2.0, 2.0 / 3.0);
  const double n = 3.0;
  expect_rel(rep.leading, std::pow(s, 9.0 / 5.0) * 3.0 * std::log(n) * std::log(n) / std::pow(n, 3.0 / 5.0), 1e-13);
  expect_rel(rep.zeta, (2.0 * std::log(n) + std::log(10.0) + std::log(2.0) + std::log(3.0)) / n, 1e-14);
  ASSERT_TRUE(rep.alpha.has_value());
  EXPECT_TRUE(rep.alpha->holds);
}

TEST(BoundReport, Preconditions) {
  try {
    bound_report(margins_input(Theorem::simple, {1.0, 0.0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::theorem_precondition_violated);
  }
  BoundInput in;
  in.theorem = Theorem::adv_nn_gen;
  in.complexities = {1.0};
  in.kappas = {{kInfinity}};
  EXPECT_THROW(bound_report(in), Error);
  EXPECT_THROW(bound_report(margins_input(Theorem::simple, {})), Error);
}

TEST(BoundReport, JsonIsDeterministic) {
  auto in = margins_input(Theorem::compl_m_gen, {0.5, 1.0, 1.5});
  in.q = 4;
  const std::string a = to_json(bound_report(in)).dump(2);
  const std::string b = to_json(bound_report(in)).dump(2);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.find("constants_policy"), std::string::npos);
}

TEST(GradientNorm, BinaryNetsMeetTheJacobianBound) {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    auto net = network::init_network({3, 5, 4, 1}, Activation::tanh, 500 + t);
    auto x = unit_point(rng, 3);
    const std::size_t y = network::forward_trace(net, x, 0).predicted;
    auto g = network::build_graph(net, {network::Placement::linear_only, network::ScaleMode::pre_scale,
                                        network::Head::margin_gap, false});
    auto delta = network::zero_perturbation(net, network::Placement::linear_only);
    auto in = g.inputs(net, x, y, &delta);
    auto eval = autodiff::forward(g.graph, in);
    auto grads = autodiff::backward(g.graph, eval, Tensor::scalar(1.0));
    network::KappaTable table(net, x);
    const auto trace = network::forward_trace(net, x, y);
    for (std::size_t i = 1; i <= net.r(); ++i) {
      const double gnorm = norm2(grads[g.delta_leaf[2 * i - 2]].values());
      const double rhs = table.at(2 * i, net.k()) * trace.layer_norms[i - 1];
      EXPECT_LE(gnorm, rhs * (1.0 + 1e-6));
    }
  }
}
