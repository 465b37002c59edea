#include "allmargin/attack.hpp"

#include <algorithm>
#include <cmath>

#include "allmargin/autodiff.hpp"
#include "allmargin/common.hpp"

namespace allmargin {

void AttackSpec::validate(std::size_t input_dim) const {
  if (!(radius >= 0.0) || !std::isfinite(radius)) throw Error(ErrorCode::invalid_argument, "attack radius must be >= 0");
  if (steps < 1) throw Error(ErrorCode::invalid_argument, "attack needs steps >= 1");
  if (restarts < 1) throw Error(ErrorCode::invalid_argument, "attack needs restarts >= 1");
  if (step_size < 0.0) throw Error(ErrorCode::invalid_argument, "attack step size must be >= 0");
  if ((!box_lo.empty() && box_lo.size() != input_dim) || (!box_hi.empty() && box_hi.size() != input_dim))
    throw Error(ErrorCode::shape_mismatch, "attack box does not match the input dimension");
  for (std::size_t i = 0; i < box_lo.size() && i < box_hi.size(); ++i)
    if (box_lo[i] > box_hi[i]) throw Error(ErrorCode::invalid_argument, "attack box has lo > hi");
}

void project_to_ball(std::span<double> candidate, std::span<const double> center, const AttackSpec& spec) {
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    double lo = center[i] - spec.radius;
    double hi = center[i] + spec.radius;
    if (!spec.box_lo.empty()) lo = std::max(lo, spec.box_lo[i]);
    if (!spec.box_hi.empty()) hi = std::min(hi, spec.box_hi[i]);
    candidate[i] = std::clamp(candidate[i], lo, std::max(lo, hi));
  }
}

namespace {

struct Probe {
  double loss = 0.0;
  bool misclassified = false;
  std::vector<double> grad;
};

Probe probe(const network::NetGraph& g, const network::Network& net, std::span<const double> x, std::size_t y) {
  const auto in = g.inputs(net, x, y);
  const auto eval = autodiff::forward(g.graph, in);
  Probe p;
  p.loss = eval.output(g.graph)[0];
  const auto& logits = eval.values[g.graph.node(g.graph.output()).args[0]];
  p.misclassified = network::output_margin(logits.values(), y) <= 0.0;
  const auto grads = autodiff::backward(g.graph, eval, autodiff::Tensor::scalar(1.0));
  const auto& gx = grads[g.x_leaf];
  p.grad.assign(gx.values().begin(), gx.values().end());
  return p;
}

bool better(bool mis_a, double loss_a, bool mis_b, double loss_b) {
  if (mis_a != mis_b) return mis_a;
  return loss_a > loss_b;
}

}  // namespace

AttackResult pgd_attack(const network::Network& net, std::span<const double> x, std::size_t y,
                        const AttackSpec& spec, bool keep_visited) {
  if (x.size() != net.input_dim())
    throw Error(ErrorCode::shape_mismatch, "attack input has " + std::to_string(x.size()) + " entries, net expects " +
                                               std::to_string(net.input_dim()));
  spec.validate(x.size());
  const auto g = network::build_graph(net, {std::nullopt, network::ScaleMode::pre_scale,
                                            network::Head::cross_entropy, false});
  const double step = spec.effective_step();

  AttackResult best;
  bool have_best = false;
  for (int restart = 0; restart < spec.restarts; ++restart) {
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(restart)));
    std::vector<double> xp(x.begin(), x.end());
    if (restart > 0)
      for (double& v : xp) v += rng.uniform(-spec.radius, spec.radius);
    project_to_ball(xp, x, spec);

    Probe p;
    for (int s = 0;; ++s) {
      p = probe(g, net, xp, y);
      if (keep_visited) best.visited.push_back(xp);
      if (!have_best || better(p.misclassified, p.loss, best.misclassified, best.loss)) {
        best.x_adv = xp;
        best.loss = p.loss;
        best.misclassified = p.misclassified;
        best.restart = restart;
        have_best = true;
      }
      if (s == spec.steps || spec.radius == 0.0) break;
      for (std::size_t i = 0; i < xp.size(); ++i) {
        if (p.grad[i] > 0.0) xp[i] += step;
        if (p.grad[i] < 0.0) xp[i] -= step;
      }
      project_to_ball(xp, x, spec);
    }
    best.restarts.push_back({p.loss, p.misclassified});
  }
  return best;
}

}  // namespace allmargin
