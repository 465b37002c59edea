#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "allmargin/network.hpp"

using namespace allmargin;
using namespace allmargin::network;

namespace {

std::vector<double> random_point(std::size_t n, Rng& rng) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  return x;
}

PerturbationSet random_delta(const Network& net, Placement p, Rng& rng, double scale) {
  PerturbationSet d = zero_perturbation(net, p);
  for (auto& v : d.deltas)
    for (double& e : v) e = scale * rng.normal();
  return d;
}

double svd_norm(const Tensor& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m.at(i, j);
  return Eigen::JacobiSVD<Eigen::MatrixXd>(e).singularValues()(0);
}

}  // namespace

TEST(Init, Deterministic) {
  auto a = init_network({3, 5, 2}, Activation::tanh, 42);
  auto b = init_network({3, 5, 2}, Activation::tanh, 42);
  EXPECT_EQ(a.weights(), b.weights());
}

TEST(Init, Shapes) {
  auto net = init_network({2, 3, 2}, Activation::tanh, 1);
  EXPECT_EQ(net.weight(1).shape(), (std::vector<std::size_t>{3, 2}));
  EXPECT_EQ(net.weight(2).shape(), (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(net.k(), 3u);
  EXPECT_EQ(net.max_width(), 3u);
}

TEST(Init, SeedsDiffer) {
  auto a = init_network({3, 5, 2}, Activation::tanh, 42);
  auto b = init_network({3, 5, 2}, Activation::tanh, 43);
  EXPECT_NE(a.weights(), b.weights());
}

TEST(Init, RejectsShortWidths) {
  EXPECT_THROW(init_network({3}, Activation::tanh, 1), Error);
  EXPECT_THROW(init_network({}, Activation::tanh, 1), Error);
}

TEST(OutputMargin, Examples) {
  std::vector<double> a{2.0, 0.5}, b{0.5, 2.0}, c{1, 1, 1};
  EXPECT_DOUBLE_EQ(output_margin(a, 0), 1.5);
  EXPECT_DOUBLE_EQ(output_margin(b, 0), 0.0);
  EXPECT_DOUBLE_EQ(output_margin(c, 2), 0.0);
}

TEST(OutputMargin, BinaryScore) {
  std::vector<double> f{0.7};
  EXPECT_DOUBLE_EQ(output_margin(f, 1), 0.7);
  EXPECT_DOUBLE_EQ(output_margin(f, 0), 0.0);
}

// |gamma(u) - gamma(v)| <= 2 ||u - v||_inf
TEST(OutputMargin, LipschitzInLogits) {
  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t l = 2 + rng.index(4);
    auto u = random_point(l, rng), v = random_point(l, rng);
    const std::size_t y = rng.index(l);
    double inf = 0.0;
    for (std::size_t i = 0; i < l; ++i) inf = std::max(inf, std::abs(u[i] - v[i]));
    EXPECT_LE(std::abs(output_margin(u, y) - output_margin(v, y)), 2.0 * inf + 1e-15);
  }
}

TEST(ForwardTrace, TieCountsAsWrong) {
  Network net({2, 2}, Activation::tanh, {Tensor::matrix(2, 2, {1, 0, 1, 0})});
  std::vector<double> x{1.0, 0.0};
  auto t = forward_trace(net, x, 0);
  EXPECT_FALSE(t.correct);
  EXPECT_EQ(t.gamma, 0.0);
}

TEST(ForwardTrace, LayerNormsAndShapeCheck) {
  auto net = init_network({3, 4, 2}, Activation::tanh, 9);
  std::vector<double> x{0.6, 0.0, 0.8};
  auto t = forward_trace(net, x, 1);
  ASSERT_EQ(t.layer_norms.size(), 2u);
  EXPECT_DOUBLE_EQ(t.layer_norms[0], 1.0);
  EXPECT_DOUBLE_EQ(t.layer_norms[1], norm2(t.hidden[2]));
  std::vector<double> bad{1.0};
  EXPECT_THROW(forward_trace(net, bad, 0), Error);
}

TEST(ForwardPerturb, ZeroDeltaIsBitExact) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    auto net = init_network({3, 6, 5, 3}, t % 2 ? Activation::tanh : Activation::softplus, 100 + t);
    auto x = random_point(3, rng);
    auto clean = forward_trace(net, x, 1);
    for (Placement p : {Placement::all_layers, Placement::linear_only, Placement::post_block})
      for (ScaleMode m : {ScaleMode::pre_scale, ScaleMode::post_scale}) {
        auto pert = forward_perturb(net, x, 1, zero_perturbation(net, p), m);
        EXPECT_EQ(pert.hidden, clean.hidden);
        EXPECT_EQ(pert.logits, clean.logits);
      }
  }
}

TEST(ForwardPerturb, SingleLinearLayer) {
  Network net({2, 2}, Activation::tanh, {Tensor::matrix(2, 2, {1, 2, 3, 4})});
  std::vector<double> x{3.0, 4.0};
  auto d = zero_perturbation(net, Placement::all_layers);
  d.deltas[0] = {0.1, -0.2};
  auto t = forward_perturb(net, x, 0, d, ScaleMode::pre_scale);
  EXPECT_DOUBLE_EQ(t.logits[0], 11.0 + 0.5);
  EXPECT_DOUBLE_EQ(t.logits[1], 25.0 - 1.0);
}

TEST(ForwardPerturb, PostScaleUsesCurrentNorm) {
  Network net({2, 2}, Activation::tanh, {Tensor::matrix(2, 2, {1, 0, 0, 1})});
  std::vector<double> x{3.0, 4.0};
  auto d = zero_perturbation(net, Placement::all_layers);
  d.deltas[0] = {1.0, 0.0};
  auto t = forward_perturb(net, x, 0, d, ScaleMode::post_scale);
  EXPECT_DOUBLE_EQ(t.logits[0], 8.0);
}

TEST(ForwardPerturb, PlacementMismatch) {
  auto net = init_network({2, 3, 2}, Activation::tanh, 1);
  auto d = zero_perturbation(net, Placement::linear_only);
  d.deltas[1] = {0, 0, 0};
  std::vector<double> x{0.1, 0.2};
  EXPECT_THROW(forward_perturb(net, x, 0, d, ScaleMode::pre_scale), Error);
}

TEST(Placement, Layout) {
  EXPECT_TRUE(placement_allows(Placement::linear_only, 1, 5));
  EXPECT_FALSE(placement_allows(Placement::linear_only, 2, 5));
  EXPECT_TRUE(placement_allows(Placement::post_block, 2, 5));
  EXPECT_TRUE(placement_allows(Placement::post_block, 5, 5));
  EXPECT_FALSE(placement_allows(Placement::post_block, 3, 5));
}

// First-order change of the logits matches the graph Jacobian to O(||delta||^2).
TEST(ForwardPerturb, FirstOrderMatchesJacobian) {
  Rng rng(21);
  auto net = init_network({3, 4, 2}, Activation::tanh, 77);
  auto x = random_point(3, rng);
  for (ScaleMode mode : {ScaleMode::pre_scale, ScaleMode::post_scale}) {
    NetGraph g = build_graph(net, {Placement::all_layers, mode, Head::logits, false});
    auto dir = random_delta(net, Placement::all_layers, rng, 1.0);
    auto clean = forward_trace(net, x, 0);
    std::vector<double> err;
    for (double eps : {1e-2, 1e-3}) {
      PerturbationSet d = dir;
      for (auto& v : d.deltas)
        for (double& e : v) e *= eps;
      auto in = g.inputs(net, x, 0, nullptr);
      std::vector<double> lin(clean.logits);
      for (std::size_t j = 0; j < net.k(); ++j) {
        Tensor jac = autodiff::jacobian(g.graph, in, g.delta_leaf[j]);
        for (std::size_t r = 0; r < jac.rows(); ++r)
          for (std::size_t c = 0; c < jac.cols(); ++c) lin[r] += jac.at(r, c) * d.deltas[j][c];
      }
      auto pert = forward_perturb(net, x, 0, d, mode);
      double e = 0.0;
      for (std::size_t r = 0; r < lin.size(); ++r) e = std::max(e, std::abs(lin[r] - pert.logits[r]));
      err.push_back(e);
    }
    // quadratic remainder: 10x smaller step, ~100x smaller error
    EXPECT_LT(err[1], err[0] / 50.0);
  }
}

TEST(Graph, MatchesDirectForward) {
  Rng rng(8);
  auto net = init_network({3, 5, 4, 3}, Activation::softplus, 8);
  auto x = random_point(3, rng);
  for (Placement p : {Placement::all_layers, Placement::linear_only, Placement::post_block})
    for (ScaleMode m : {ScaleMode::pre_scale, ScaleMode::post_scale}) {
      auto d = random_delta(net, p, rng, 0.1);
      NetGraph g = build_graph(net, {p, m, Head::logits, false});
      auto in = g.inputs(net, x, 2, &d);
      auto out = autodiff::forward(g.graph, in).output(g.graph);
      auto direct = forward_perturb(net, x, 2, d, m);
      for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out[i], direct.logits[i], 1e-13);
    }
}

TEST(Kappa, SingleLinearLayerMatchesSvd) {
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    auto net = init_network({4, 3}, Activation::tanh, 50 + t);
    auto x = random_point(4, rng);
    const double oracle = svd_norm(net.weight(1));
    EXPECT_NEAR(interlayer_jacobian_norm(net, x, 1, 1), oracle, 1e-6 * oracle);
  }
}

TEST(Kappa, EmptyCompositionIsOne) {
  auto net = init_network({2, 3, 2}, Activation::tanh, 1);
  std::vector<double> x{0.3, 0.4};
  EXPECT_EQ(interlayer_jacobian_norm(net, x, 2, 1), 1.0);
  EXPECT_EQ(KappaTable(net, x).at(4, 3), 1.0);
}

TEST(Kappa, TanhLayerAtZero) {
  Network net({2, 2, 2}, Activation::tanh,
              {Tensor::matrix(2, 2, {0, 0, 0, 0}), Tensor::matrix(2, 2, {1, 0, 0, 1})});
  std::vector<double> x{0.3, 0.4};
  EXPECT_DOUBLE_EQ(interlayer_jacobian_norm(net, x, 2, 2), 1.0);
}

TEST(Kappa, IndexOutOfRange) {
  auto net = init_network({2, 3, 2}, Activation::tanh, 1);
  std::vector<double> x{0.3, 0.4};
  EXPECT_THROW(interlayer_jacobian_norm(net, x, 0, 1), Error);
  EXPECT_THROW(interlayer_jacobian_norm(net, x, 3, 1), Error);
  EXPECT_THROW(interlayer_jacobian_norm(net, x, 1, 4), Error);
}

TEST(Kappa, TableMatchesSingleQueries) {
  Rng rng(6);
  auto net = init_network({3, 5, 4, 2}, Activation::tanh, 3);
  auto x = random_point(3, rng);
  KappaTable table(net, x);
  for (std::size_t i = 1; i <= net.k(); ++i)
    for (std::size_t j = i; j <= net.k(); ++j)
      EXPECT_DOUBLE_EQ(table.at(i, j), interlayer_jacobian_norm(net, x, i, j));
}

// kappa_{j<-i} <= kappa_{j<-m+1} kappa_{m<-i}
TEST(Kappa, Submultiplicative) {
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    auto net = init_network({3, 5, 4, 3}, t % 2 ? Activation::tanh : Activation::softplus, 200 + t);
    auto x = random_point(3, rng);
    KappaTable kt(net, x);
    for (std::size_t i = 1; i <= net.k(); ++i)
      for (std::size_t j = i; j <= net.k(); ++j)
        for (std::size_t m = i; m < j; ++m)
          EXPECT_LE(kt.at(i, j), kt.at(m + 1, j) * kt.at(i, m) * (1 + 1e-9));
  }
}

TEST(KappaPrime, GridValues) {
  EXPECT_NEAR(kappa_prime(Activation::tanh), 4.0 / (3.0 * std::sqrt(3.0)), 1e-8);
  EXPECT_NEAR(kappa_prime(Activation::softplus), 0.25, 1e-9);
  EXPECT_TRUE(std::isinf(kappa_prime(Activation::relu)));
}

TEST(Gnorm, WeightsAndFrozenLayers) {
  auto net = init_network({2, 2, 2}, Activation::tanh, 1);
  auto d = zero_perturbation(net, Placement::all_layers, NormSpec{{1.0, 2.0, 1.0}, 2.0});
  d.deltas[0] = {3, 0};
  d.deltas[1] = {0, 2};
  EXPECT_DOUBLE_EQ(gnorm(d), 5.0);
  d.norm.alpha[2] = kInfinity;
  EXPECT_DOUBLE_EQ(gnorm(d), 5.0);
  d.deltas[2] = {1e-3, 0};
  EXPECT_TRUE(std::isinf(gnorm(d)));
}

TEST(Json, RoundTrip) {
  auto net = init_network({3, 7, 2}, Activation::softplus, 99);
  auto back = network_from_json(nlohmann::json::parse(to_json(net).dump()));
  EXPECT_EQ(back.weights(), net.weights());
  EXPECT_EQ(back.widths(), net.widths());
  EXPECT_EQ(back.activation(), net.activation());
}

TEST(Json, RejectsBadDocuments) {
  auto j = to_json(init_network({2, 2}, Activation::tanh, 1));
  j["format_version"] = 7;
  EXPECT_THROW(network_from_json(j), Error);
  auto k = to_json(init_network({2, 2}, Activation::tanh, 1));
  k["weights"][0].push_back(1.0);
  EXPECT_THROW(network_from_json(k), Error);
}
