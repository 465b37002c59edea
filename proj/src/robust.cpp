#include "allmargin/robust.hpp"

#include <cmath>
#include <set>

namespace allmargin::robust {

using autodiff::Tensor;
using network::npos;

void RobustConfig::validate(std::size_t input_dim) const {
  train_attack.validate(input_dim);
  eval_attack.validate(input_dim);
  if (!(delta_step >= 0.0) || !std::isfinite(delta_step))
    throw Error(ErrorCode::invalid_config, "delta_step must be >= 0");
  if (!(delta_decay >= 0.0 && delta_decay <= 1.0))
    throw Error(ErrorCode::invalid_config, "delta_decay must lie in [0, 1]");
}

nlohmann::json attack_to_json(const AttackSpec& s) {
  return {{"radius", s.radius},     {"steps", s.steps},   {"step_size", s.step_size}, {"restarts", s.restarts},
          {"box_lo", s.box_lo},     {"box_hi", s.box_hi}, {"seed", s.seed}};
}

AttackSpec attack_from_json(const nlohmann::json& j, const AttackSpec& defaults) {
  static const std::set<std::string> known = {"radius", "steps", "step_size", "restarts", "box_lo", "box_hi",
                                              "pixel_units", "seed"};
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, "attack must be an object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw Error(ErrorCode::invalid_config, "unknown key '" + key + "' in attack");
  AttackSpec s = defaults;
  try {
    if (j.contains("radius")) s.radius = j.at("radius").get<double>();
    if (j.contains("steps")) s.steps = j.at("steps").get<int>();
    if (j.contains("step_size")) s.step_size = j.at("step_size").get<double>();
    if (j.contains("restarts")) s.restarts = j.at("restarts").get<int>();
    if (j.contains("box_lo")) s.box_lo = j.at("box_lo").get<std::vector<double>>();
    if (j.contains("box_hi")) s.box_hi = j.at("box_hi").get<std::vector<double>>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    if (j.value("pixel_units", false)) {
      s.radius = data::pixel_units(s.radius);
      s.step_size = data::pixel_units(s.step_size);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("bad attack value: ") + e.what());
  }
  if (s.steps < 1 || s.restarts < 1 || !(s.radius >= 0.0) || s.step_size < 0.0)
    throw Error(ErrorCode::invalid_config, "attack needs radius >= 0, steps >= 1, restarts >= 1");
  return s;
}

RobustEvaluation robust_evaluation(const Network& net, const data::Dataset& ds, const AttackSpec& spec,
                                   unsigned threads) {
  if (ds.size() == 0) throw Error(ErrorCode::empty_dataset, "cannot evaluate robust error on an empty dataset");
  spec.validate(net.input_dim());
  RobustEvaluation out;
  out.attacks.resize(ds.size());
  std::vector<double> wrong(ds.size()), clean(ds.size());
  parallel_for(ds.size(), resolve_threads(threads), [&](std::size_t i) {
    AttackSpec s = spec;
    s.seed = mix_seed(spec.seed, i);
    clean[i] = network::forward_trace(net, ds.inputs[i], ds.labels[i]).correct ? 0.0 : 1.0;
    out.attacks[i] = pgd_attack(net, ds.inputs[i], ds.labels[i], s);
    wrong[i] = clean[i] > 0.0 || out.attacks[i].misclassified ? 1.0 : 0.0;
  });
  out.error = pairwise_sum(wrong) / static_cast<double>(ds.size());
  out.clean_error = pairwise_sum(clean) / static_cast<double>(ds.size());
  return out;
}

double robust_error(const Network& net, const data::Dataset& ds, const AttackSpec& spec, unsigned threads) {
  return robust_evaluation(net, ds, spec, threads).error;
}

nlohmann::json attack_records(const RobustEvaluation& eval) {
  auto out = nlohmann::json::array();
  for (std::size_t i = 0; i < eval.attacks.size(); ++i)
    for (std::size_t r = 0; r < eval.attacks[i].restarts.size(); ++r)
      out.push_back({{"example_id", i},
                     {"restart", r},
                     {"final_loss", eval.attacks[i].restarts[r].final_loss},
                     {"misclassified", eval.attacks[i].restarts[r].misclassified}});
  return out;
}

StepResult robust_update(Network& net, const Batch& batch, const TrainConfig& cfg, const RobustConfig& rc,
                         double lr, std::uint64_t step_seed) {
  if (batch.x.size() != batch.y.size()) throw Error(ErrorCode::count_mismatch, "batch inputs and labels differ");
  if (batch.size() == 0) throw Error(ErrorCode::empty_dataset, "empty batch");
  rc.validate(net.input_dim());
  network::GraphOptions o;
  o.head = network::Head::cross_entropy;
  if (rc.delta_steps) {
    o.placement = cfg.placement;
    o.scale = cfg.scale;
  }
  const network::NetGraph g = network::build_graph(net, o);
  const AttackSpec& spec = rc.train_attack;
  const double step = spec.effective_step();

  StepResult out;
  if (rc.delta_steps) out.deltas.assign(batch.size(), network::zero_perturbation(net, cfg.placement));
  std::vector<std::vector<Tensor>> grads(batch.size());
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), resolve_threads(cfg.threads), [&](std::size_t e) {
    std::span<const double> x = batch.x[e];
    const std::size_t y = batch.y[e];
    Rng rng(mix_seed(step_seed, e));
    std::vector<double> xp(x.begin(), x.end());
    for (double& v : xp) v += rng.uniform(-spec.radius, spec.radius);
    project_to_ball(xp, x, spec);
    const network::PerturbationSet* delta = rc.delta_steps ? &out.deltas[e] : nullptr;
    for (int s = 0; s < spec.steps; ++s) {
      auto ev = autodiff::forward(g.graph, g.inputs(net, xp, y, delta));
      auto all = autodiff::backward(g.graph, ev, Tensor::scalar(1.0));
      const Tensor& gx = all[g.x_leaf];
      for (std::size_t i = 0; i < xp.size(); ++i) {
        if (gx[i] > 0.0) xp[i] += step;
        if (gx[i] < 0.0) xp[i] -= step;
      }
      project_to_ball(xp, x, spec);
      if (!rc.delta_steps) continue;
      auto& d = out.deltas[e];
      for (std::size_t j = 0; j < g.delta_leaf.size(); ++j) {
        if (g.delta_leaf[j] == npos) continue;
        const Tensor& gj = all[g.delta_leaf[j]];
        for (std::size_t c = 0; c < d.deltas[j].size(); ++c)
          d.deltas[j][c] = rc.delta_decay * d.deltas[j][c] + rc.delta_step * gj[c];
      }
    }
    auto ev = autodiff::forward(g.graph, g.inputs(net, xp, y, delta));
    losses[e] = ev.output(g.graph)[0];
    auto all = autodiff::backward(g.graph, ev, Tensor::scalar(1.0));
    for (std::size_t leaf : g.weight_leaf) grads[e].push_back(std::move(all[leaf]));
  });
  training::detail::apply_gradients(net, grads, cfg, lr);
  out.loss = pairwise_sum(losses) / static_cast<double>(losses.size());
  return out;
}

training::TrainResult train_robust(const Network& init, const TrainConfig& cfg, const data::Dataset& train_set,
                                   const data::Dataset& validation, training::Method method,
                                   const RobustConfig& rc) {
  RobustConfig run = rc;
  if (method == training::Method::madry)
    run.delta_steps = false;
  else if (method != training::Method::robust_amo)
    throw Error(ErrorCode::invalid_argument,
                "train_robust handles madry and robust-amo; use train for " + training::to_string(method));
  run.validate(init.input_dim());
  const std::uint64_t base = mix_seed(cfg.seed, 0xAD7u);
  const unsigned threads = resolve_threads(cfg.threads);
  auto step = [&](Network& net, const Batch& b, double lr, std::uint64_t s) {
    robust_update(net, b, cfg, run, lr, mix_seed(base, s));
  };
  auto extra = [&](const Network& net, const data::Dataset& ds, training::EpochRow& row) {
    row.robust_error = robust_error(net, ds, run.eval_attack, threads);
  };
  return training::detail::run_epochs(init, cfg, train_set, validation, training::to_string(method), step, extra);
}

}  // namespace allmargin::robust
