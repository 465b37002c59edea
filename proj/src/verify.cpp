#include "allmargin/verify.hpp"

#include <algorithm>
#include <functional>

#include "allmargin/autodiff.hpp"
#include "allmargin/network.hpp"

namespace allmargin::verify {

using autodiff::Activation;
using autodiff::Graph;
using autodiff::GraphBuilder;
using autodiff::Tensor;
using network::GraphOptions;
using network::Head;
using network::Placement;
using network::ScaleMode;

namespace {

constexpr double kStep = 1e-4;
constexpr double kFineStep = 1e-5;

struct Sample {
  std::vector<Tensor> inputs;
  std::vector<bool> discrete;  // per leaf
};

struct Case {
  std::string name;
  std::function<std::pair<Graph, Sample>(Rng&, std::size_t point)> make;
};

Tensor random_tensor(const std::vector<std::size_t>& shape, Rng& rng, double scale = 1.0) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return Tensor(shape, v);
}

Tensor target(std::size_t n, Rng& rng) {
  if (n == 1) return Tensor::scalar(rng.bernoulli(0.5) ? 1.0 : -1.0);
  Tensor t = Tensor::zeros({n});
  t[rng.index(n)] = 1.0;
  return t;
}

Case primitive(std::string name, std::function<Graph()> build, bool last_is_target = false) {
  return {std::move(name), [build, last_is_target](Rng& rng, std::size_t) {
            Graph g = build();
            Sample s;
            for (std::size_t leaf = 0; leaf < g.leaves().size(); ++leaf) {
              const auto& shape = g.node(g.leaves()[leaf]).shape;
              const bool is_target = last_is_target && leaf + 1 == g.leaves().size();
              s.inputs.push_back(is_target ? target(shape[0], rng) : random_tensor(shape, rng));
              s.discrete.push_back(is_target);
            }
            return std::make_pair(std::move(g), std::move(s));
          }};
}

Case network_case(std::string name, std::vector<std::size_t> widths, Activation act, GraphOptions opts) {
  return {std::move(name), [widths, act, opts](Rng& rng, std::size_t point) {
            auto net = network::init_network(widths, act, mix_seed(rng.next_u64(), point));
            auto ng = network::build_graph(net, opts);
            std::vector<double> x(net.input_dim());
            for (double& v : x) v = rng.normal();
            const std::size_t y = rng.index(net.class_count());
            auto delta = network::zero_perturbation(net, opts.placement.value_or(Placement::all_layers));
            for (auto& layer : delta.deltas)
              for (double& v : layer) v = 0.1 * rng.normal();
            std::vector<std::vector<double>> masks;
            for (std::size_t i = 1; i + 1 < widths.size(); ++i) {
              masks.emplace_back(widths[i]);
              for (double& v : masks.back()) v = rng.uniform(0.5, 1.5);
            }
            Sample s;
            s.inputs = ng.inputs(net, x, y, opts.placement ? &delta : nullptr, opts.dropout ? &masks : nullptr);
            s.discrete.assign(s.inputs.size(), false);
            if (ng.target_leaf != network::npos) s.discrete[ng.target_leaf] = true;
            return std::make_pair(std::move(ng.graph), std::move(s));
          }};
}

std::vector<Case> cases() {
  std::vector<Case> out;
  for (Activation a : {Activation::tanh, Activation::softplus, Activation::identity}) {
    out.push_back(primitive("activation-" + autodiff::to_string(a), [a] {
      GraphBuilder b;
      b.activation(a, b.input("x", {4}));
      return b.build();
    }));
  }
  out.push_back(primitive("matvec", [] {
    GraphBuilder b;
    b.matvec(b.input("W", {3, 4}), b.input("x", {4}));
    return b.build();
  }));
  out.push_back(primitive("add-hadamard-scale", [] {
    GraphBuilder b;
    auto a = b.input("a", {4});
    auto c = b.input("c", {4});
    b.add(b.hadamard(a, c), b.scale(-0.7, a));
    return b.build();
  }));
  out.push_back(primitive("scalar-mul-norm2", [] {
    GraphBuilder b;
    auto a = b.input("a", {4});
    auto s = b.input("s", {1});
    return b.build(b.scalar_mul(b.scalar_mul(a, b.norm2(a)), s));
  }));
  out.push_back(primitive("dot", [] {
    GraphBuilder b;
    b.dot(b.input("a", {4}), b.input("c", {4}));
    return b.build();
  }));
  out.push_back(primitive("softmax-xent", [] {
    GraphBuilder b;
    auto f = b.input("f", {4});
    return b.build(b.softmax_xent(f, b.input("t", {4})));
  }, true));
  out.push_back(primitive("softmax-xent-binary", [] {
    GraphBuilder b;
    auto f = b.input("f", {1});
    return b.build(b.softmax_xent(f, b.input("t", {1})));
  }, true));
  out.push_back(primitive("margin-gap", [] {
    GraphBuilder b;
    auto f = b.input("f", {4});
    return b.build(b.margin_gap(f, b.input("t", {4})));
  }, true));

  const std::vector<std::size_t> multi = {3, 5, 4, 3}, binary = {3, 5, 4, 1};
  out.push_back(network_case("net-tanh-logits", multi, Activation::tanh, {std::nullopt, ScaleMode::pre_scale, Head::logits, false}));
  out.push_back(network_case("net-tanh-xent", multi, Activation::tanh, {std::nullopt, ScaleMode::pre_scale, Head::cross_entropy, false}));
  out.push_back(network_case("net-tanh-all-pre-gap", multi, Activation::tanh,
                             {Placement::all_layers, ScaleMode::pre_scale, Head::margin_gap, false}));
  out.push_back(network_case("net-softplus-block-post-xent", multi, Activation::softplus,
                             {Placement::post_block, ScaleMode::post_scale, Head::cross_entropy, false}));
  out.push_back(network_case("net-tanh-binary-linear-post-xent", binary, Activation::tanh,
                             {Placement::linear_only, ScaleMode::post_scale, Head::cross_entropy, false}));
  out.push_back(network_case("net-softplus-binary-all-pre-gap", binary, Activation::softplus,
                             {Placement::all_layers, ScaleMode::pre_scale, Head::margin_gap, false}));
  out.push_back(network_case("net-tanh-dropout-xent", multi, Activation::tanh,
                             {std::nullopt, ScaleMode::pre_scale, Head::cross_entropy, true}));
  return out;
}

}  // namespace

GradientSuiteReport gradient_suite(std::uint64_t seed, std::size_t points) {
  GradientSuiteReport report;
  report.points = points;
  const auto all = cases();
  for (std::size_t ci = 0; ci < all.size(); ++ci) {
    GradientCase result;
    result.name = all[ci].name;
    Rng rng(mix_seed(seed, ci));
    for (std::size_t p = 0; p < points; ++p) {
      auto [graph, sample] = all[ci].make(rng, p);
      for (std::size_t leaf = 0; leaf < sample.inputs.size(); ++leaf) {
        if (sample.discrete[leaf]) continue;
        auto check = autodiff::finite_diff_check(graph, sample.inputs, leaf, kStep);
        if (check.nonsmooth()) {
          ++result.nonsmooth;
          continue;
        }
        double err = check.max_rel_error;
        if (err > report.tolerance) {
          auto fine = autodiff::finite_diff_check(graph, sample.inputs, leaf, kFineStep);
          if (!fine.nonsmooth() && fine.max_rel_error < err) {
            err = fine.max_rel_error;
            ++result.refined;
          }
        }
        ++result.checks;
        result.max_rel_error = std::max(result.max_rel_error, err);
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, result.max_rel_error);
    report.cases.push_back(result);
  }
  return report;
}

}  // namespace allmargin::verify
