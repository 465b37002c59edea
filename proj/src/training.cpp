#include "allmargin/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

namespace allmargin::training {

using autodiff::Tensor;
using network::GraphOptions;
using network::Head;
using network::NetGraph;
using network::npos;

std::string to_string(Method m) {
  switch (m) {
    case Method::sgd: return "sgd";
    case Method::amo: return "amo";
    case Method::dropout: return "dropout";
    case Method::madry: return "madry";
    case Method::robust_amo: return "robust-amo";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::sgd, Method::amo, Method::dropout, Method::madry, Method::robust_amo})
    if (to_string(m) == s) return m;
  throw Error(ErrorCode::unknown_kind, "unknown method '" + s + "'");
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::invalid_config, what); };
  if (epochs < 0) bad("epochs must be >= 0");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) bad("lr must be positive");
  if (!(lr_decay > 0.0)) bad("lr_decay must be positive");
  if (!(weight_decay >= 0.0)) bad("weight_decay must be >= 0");
  if (t < 1) bad("t must be >= 1");
  if (!(eta_perturb >= 0.0) || !std::isfinite(eta_perturb)) bad("eta_perturb must be >= 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) bad("lambda must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout must lie in [0, 1)");
  if (eval_every < 1) bad("eval_every must be >= 1");
  margin_solver.validate();
}

double TrainConfig::lr_at(int epoch) const {
  double v = lr;
  for (int m : lr_milestones)
    if (epoch >= m) v *= lr_decay;
  return v;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"lr_decay", c.lr_decay},
          {"lr_milestones", c.lr_milestones},
          {"weight_decay", c.weight_decay},
          {"t", c.t},
          {"eta_perturb", c.eta_perturb},
          {"lambda", c.lambda},
          {"literal_gradient", c.literal_gradient},
          {"placement", network::to_string(c.placement)},
          {"scale", network::to_string(c.scale)},
          {"dropout", c.dropout},
          {"seed", c.seed},
          {"threads", c.threads},
          {"eval_every", c.eval_every},
          {"margin_samples", c.margin_samples},
          {"margin_solver",
           {{"ascent_steps", c.margin_solver.ascent_steps},
            {"ascent_rate", c.margin_solver.ascent_rate},
            {"ascent_growth", c.margin_solver.ascent_growth},
            {"bisection_tolerance", c.margin_solver.bisection_tolerance},
            {"max_bisections", c.margin_solver.max_bisections},
            {"restarts", c.margin_solver.restarts},
            {"refine_iterations", c.margin_solver.refine_iterations},
            {"seed", c.margin_solver.seed}}}};
}

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw Error(ErrorCode::invalid_config, "unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"epochs", "batch_size", "lr", "lr_decay", "lr_milestones", "weight_decay", "t", "eta_perturb",
                  "lambda", "literal_gradient", "placement", "scale", "dropout", "seed", "threads", "eval_every",
                  "margin_samples", "margin_solver"},
                 "train");
  TrainConfig c;
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "lr", c.lr);
  read(j, "lr_decay", c.lr_decay);
  read(j, "lr_milestones", c.lr_milestones);
  read(j, "weight_decay", c.weight_decay);
  read(j, "t", c.t);
  read(j, "eta_perturb", c.eta_perturb);
  read(j, "lambda", c.lambda);
  read(j, "literal_gradient", c.literal_gradient);
  std::string placement = network::to_string(c.placement), scale = network::to_string(c.scale);
  read(j, "placement", placement);
  read(j, "scale", scale);
  try {
    c.placement = network::placement_from_string(placement);
    c.scale = network::scale_mode_from_string(scale);
  } catch (const Error& e) {
    throw Error(ErrorCode::invalid_config, e.what());
  }
  read(j, "dropout", c.dropout);
  read(j, "seed", c.seed);
  read(j, "threads", c.threads);
  read(j, "eval_every", c.eval_every);
  read(j, "margin_samples", c.margin_samples);
  if (j.contains("margin_solver")) {
    const auto& m = j.at("margin_solver");
    reject_unknown(m,
                   {"ascent_steps", "ascent_rate", "ascent_growth", "bisection_tolerance", "max_bisections",
                    "restarts", "refine_iterations", "seed"},
                   "train.margin_solver");
    read(m, "ascent_steps", c.margin_solver.ascent_steps);
    read(m, "ascent_rate", c.margin_solver.ascent_rate);
    read(m, "ascent_growth", c.margin_solver.ascent_growth);
    read(m, "bisection_tolerance", c.margin_solver.bisection_tolerance);
    read(m, "max_bisections", c.margin_solver.max_bisections);
    read(m, "restarts", c.margin_solver.restarts);
    read(m, "refine_iterations", c.margin_solver.refine_iterations);
    read(m, "seed", c.margin_solver.seed);
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::invalid_config, e.what());
  }
  return c;
}

namespace {

std::string cell(double v) { return std::isnan(v) ? "" : format_double(v); }

double parse_cell(const std::string& s) {
  if (s.empty()) return kNaN;
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    if (s == "inf") return kInfinity;
    throw Error(ErrorCode::malformed_input, "bad number '" + s + "'");
  }
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

constexpr const char* kRecordColumns = "epoch,split,error,loss,mean_margin,robust_error";

}  // namespace

std::string to_csv(const TrainRecord& rec) {
  std::string out = "# allmargin-train-record v1 method=" + rec.method + "\n" + kRecordColumns + "\n";
  for (const EpochRow& r : rec.rows)
    out += std::to_string(r.epoch) + "," + r.split + "," + cell(r.error) + "," + cell(r.loss) + "," +
           cell(r.mean_margin) + "," + cell(r.robust_error) + "\n";
  return out;
}

TrainRecord train_record_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  const std::string tag = "# allmargin-train-record v1 method=";
  if (!std::getline(in, line) || line.rfind(tag, 0) != 0)
    throw Error(ErrorCode::malformed_input, "missing train-record header");
  TrainRecord rec;
  rec.method = line.substr(tag.size());
  if (!std::getline(in, line) || line != kRecordColumns)
    throw Error(ErrorCode::malformed_input, "unexpected train-record columns");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_commas(line);
    if (f.size() != 6) throw Error(ErrorCode::malformed_input, "expected 6 fields: " + line);
    EpochRow r;
    double epoch = parse_cell(f[0]);
    if (!(epoch >= 0) || epoch != std::floor(epoch)) throw Error(ErrorCode::malformed_input, "bad epoch");
    r.epoch = static_cast<int>(epoch);
    r.split = f[1];
    r.error = parse_cell(f[2]);
    r.loss = parse_cell(f[3]);
    r.mean_margin = parse_cell(f[4]);
    r.robust_error = parse_cell(f[5]);
    rec.rows.push_back(r);
  }
  return rec;
}

namespace {

NetGraph perturbed_graph(const Network& net, Placement placement, ScaleMode scale) {
  GraphOptions o;
  o.placement = placement;
  o.scale = scale;
  o.head = Head::cross_entropy;
  return network::build_graph(net, o);
}

NetGraph clean_graph(const Network& net, bool dropout = false) {
  GraphOptions o;
  o.head = Head::cross_entropy;
  o.dropout = dropout;
  return network::build_graph(net, o);
}

std::vector<Tensor> weight_grads(const NetGraph& g, std::vector<Tensor>& grads) {
  std::vector<Tensor> out;
  out.reserve(g.weight_leaf.size());
  for (std::size_t leaf : g.weight_leaf) out.push_back(std::move(grads[leaf]));
  return out;
}

void check_batch(const Network& net, const Batch& batch) {
  if (batch.x.size() != batch.y.size()) throw Error(ErrorCode::count_mismatch, "batch inputs and labels differ");
  if (batch.size() == 0) throw Error(ErrorCode::empty_dataset, "empty batch");
  for (const auto& x : batch.x)
    if (x.size() != net.input_dim()) throw Error(ErrorCode::shape_mismatch, "batch input has the wrong width");
}

}  // namespace

Objective perturbed_objective(const Network& net, std::span<const double> x, std::size_t y,
                              const PerturbationSet& delta, double lambda, ScaleMode scale) {
  NetGraph g = perturbed_graph(net, delta.placement, scale);
  auto in = g.inputs(net, x, y, &delta);
  auto ev = autodiff::forward(g.graph, in);
  auto grads = autodiff::backward(g.graph, ev, Tensor::scalar(1.0));
  Objective out;
  out.gradient = delta;
  double penalty = 0.0;
  for (std::size_t j = 0; j < g.delta_leaf.size(); ++j) {
    if (g.delta_leaf[j] == npos) continue;
    const Tensor& gj = grads[g.delta_leaf[j]];
    auto& d = out.gradient.deltas[j];
    for (std::size_t c = 0; c < d.size(); ++c) {
      penalty += delta.deltas[j][c] * delta.deltas[j][c];
      d[c] = gj[c] - 2.0 * lambda * delta.deltas[j][c];
    }
  }
  out.value = ev.output(g.graph)[0] - lambda * penalty;
  return out;
}

Batch make_batch(const data::Dataset& ds, std::span<const std::size_t> indices) {
  Batch b;
  for (std::size_t i : indices) {
    if (i >= ds.size()) throw Error(ErrorCode::index_out_of_range, "batch index out of range");
    b.x.emplace_back(ds.inputs[i]);
    b.y.push_back(ds.labels[i]);
  }
  return b;
}

namespace detail {

void apply_gradients(Network& net, const std::vector<std::vector<Tensor>>& grads, const TrainConfig& cfg,
                     double lr) {
  const double b = static_cast<double>(grads.size());
  const double shrink = 1.0 - lr * cfg.weight_decay;
  auto& weights = net.weights();
  for (std::size_t i = 0; i < weights.size(); ++i) {
    auto w = weights[i].values();
    for (std::size_t c = 0; c < w.size(); ++c) {
      double s = 0.0;
      for (const auto& g : grads) s += g[i][c];
      w[c] = w[c] * shrink - lr * (s / b);
    }
  }
}

}  // namespace detail

namespace {

double mean_of(const std::vector<double>& v) { return pairwise_sum(v) / static_cast<double>(v.size()); }

}  // namespace

StepResult sgd_step(Network& net, const Batch& batch, const TrainConfig& cfg, double lr) {
  check_batch(net, batch);
  NetGraph g = clean_graph(net);
  std::vector<std::vector<Tensor>> grads(batch.size());
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), resolve_threads(cfg.threads), [&](std::size_t e) {
    auto ev = autodiff::forward(g.graph, g.inputs(net, batch.x[e], batch.y[e]));
    losses[e] = ev.output(g.graph)[0];
    auto all = autodiff::backward(g.graph, ev, Tensor::scalar(1.0));
    grads[e] = weight_grads(g, all);
  });
  detail::apply_gradients(net, grads, cfg, lr);
  return {mean_of(losses), {}};
}

StepResult amo_update(Network& net, const Batch& batch, const TrainConfig& cfg, double lr) {
  check_batch(net, batch);
  if (cfg.t < 1) throw Error(ErrorCode::invalid_argument, "t must be >= 1");
  NetGraph g = perturbed_graph(net, cfg.placement, cfg.scale);
  const double eta = cfg.eta_perturb, decay = 1.0 - cfg.eta_perturb * cfg.lambda;
  StepResult out;
  out.deltas.assign(batch.size(), network::zero_perturbation(net, cfg.placement));
  std::vector<std::vector<Tensor>> grads(batch.size());
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), resolve_threads(cfg.threads), [&](std::size_t e) {
    PerturbationSet& delta = out.deltas[e];
    for (int s = 0; s < cfg.t; ++s) {
      auto ev = autodiff::forward(g.graph, g.inputs(net, batch.x[e], batch.y[e], &delta));
      auto all = autodiff::backward(g.graph, ev, Tensor::scalar(1.0));
      for (std::size_t j = 0; j < g.delta_leaf.size(); ++j) {
        if (g.delta_leaf[j] == npos) continue;
        const Tensor& gj = all[g.delta_leaf[j]];
        auto& d = delta.deltas[j];
        for (std::size_t c = 0; c < d.size(); ++c) {
          if (cfg.literal_gradient)
            d[c] = d[c] + eta * (gj[c] - 2.0 * cfg.lambda * d[c]);
          else
            d[c] = decay * d[c] + eta * gj[c];
        }
      }
    }
    auto ev = autodiff::forward(g.graph, g.inputs(net, batch.x[e], batch.y[e], &delta));
    losses[e] = ev.output(g.graph)[0];
    auto all = autodiff::backward(g.graph, ev, Tensor::scalar(1.0));
    grads[e] = weight_grads(g, all);
  });
  detail::apply_gradients(net, grads, cfg, lr);
  out.loss = mean_of(losses);
  return out;
}

StepResult dropout_step(Network& net, const Batch& batch, const TrainConfig& cfg, double lr,
                        std::uint64_t masks_seed) {
  check_batch(net, batch);
  NetGraph g = clean_graph(net, true);
  const double keep = 1.0 - cfg.dropout;
  std::vector<std::vector<Tensor>> grads(batch.size());
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), resolve_threads(cfg.threads), [&](std::size_t e) {
    Rng rng(mix_seed(masks_seed, e));
    std::vector<std::vector<double>> masks(g.mask_leaf.size());
    for (std::size_t i = 0; i < masks.size(); ++i) {
      masks[i].resize(net.widths()[i + 1]);
      for (double& m : masks[i]) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    }
    auto ev = autodiff::forward(g.graph, g.inputs(net, batch.x[e], batch.y[e], nullptr, &masks));
    losses[e] = ev.output(g.graph)[0];
    auto all = autodiff::backward(g.graph, ev, Tensor::scalar(1.0));
    grads[e] = weight_grads(g, all);
  });
  detail::apply_gradients(net, grads, cfg, lr);
  return {mean_of(losses), {}};
}

Metrics evaluate(const Network& net, const data::Dataset& ds, unsigned threads) {
  if (ds.size() == 0) throw Error(ErrorCode::empty_dataset, "cannot evaluate on an empty dataset");
  NetGraph g = clean_graph(net);
  std::vector<double> losses(ds.size()), wrong(ds.size());
  parallel_for(ds.size(), resolve_threads(threads), [&](std::size_t i) {
    auto ev = autodiff::forward(g.graph, g.inputs(net, ds.inputs[i], ds.labels[i]));
    losses[i] = ev.output(g.graph)[0];
    const Tensor& logits = ev.values[g.graph.node(g.graph.output()).args[0]];
    wrong[i] = network::output_margin(logits.values(), ds.labels[i]) > 0.0 ? 0.0 : 1.0;
  });
  return {mean_of(wrong), mean_of(losses)};
}

double mean_margin(const Network& net, const data::Dataset& ds, std::size_t samples,
                   const margin::SolverConfig& solver, unsigned threads) {
  std::vector<std::vector<double>> xs;
  std::vector<std::size_t> ys;
  for (std::size_t i = 0; i < ds.size() && xs.size() < samples; ++i) {
    if (!network::forward_trace(net, ds.inputs[i], ds.labels[i]).correct) continue;
    xs.push_back(ds.inputs[i]);
    ys.push_back(ds.labels[i]);
  }
  if (xs.empty()) return kNaN;
  auto results = margin::estimate_margins(net, xs, ys, margin::MarginProblem{}, solver, resolve_threads(threads));
  std::vector<double> values;
  for (const auto& r : results) values.push_back(r.value);
  return mean_of(values);
}

namespace detail {

TrainResult run_epochs(const Network& init, const TrainConfig& cfg, const data::Dataset& train_set,
                       const data::Dataset& validation, const std::string& method, const StepFn& step,
                       const ExtraMetrics& extra) {
  cfg.validate();
  if (train_set.size() == 0) throw Error(ErrorCode::empty_dataset, "training set is empty");
  train_set.validate();
  if (validation.size() > 0) validation.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainResult out{init, {}};
  out.record.method = method;
  const unsigned threads = resolve_threads(cfg.threads);
  std::uint64_t step_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    auto order = permutation(train_set.size(), rng);
    const double lr = cfg.lr_at(epoch);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      Batch batch = make_batch(train_set, std::span<const std::size_t>(order).subspan(b, end - b));
      step(out.net, batch, lr, step_index++);
    }
    const bool last = epoch + 1 == cfg.epochs;
    if (!last && (epoch + 1) % cfg.eval_every != 0) continue;
    for (const data::Dataset* ds : {&train_set, &validation}) {
      if (ds->size() == 0) continue;
      EpochRow row;
      row.epoch = epoch + 1;
      row.split = ds == &train_set ? "train" : "validation";
      Metrics m = evaluate(out.net, *ds, threads);
      row.error = m.error;
      row.loss = m.loss;
      if (last && ds == &train_set && cfg.margin_samples > 0)
        row.mean_margin = mean_margin(out.net, *ds, cfg.margin_samples, cfg.margin_solver, threads);
      if (extra) extra(out.net, *ds, row);
      out.record.rows.push_back(row);
    }
  }
  out.record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace detail

TrainResult train(const Network& init, const TrainConfig& cfg, const data::Dataset& train_set,
                  const data::Dataset& validation, Method method) {
  detail::StepFn step;
  switch (method) {
    case Method::sgd:
      step = [&](Network& net, const Batch& b, double lr, std::uint64_t) { sgd_step(net, b, cfg, lr); };
      break;
    case Method::amo:
      step = [&](Network& net, const Batch& b, double lr, std::uint64_t) { amo_update(net, b, cfg, lr); };
      break;
    case Method::dropout: {
      const std::uint64_t base = mix_seed(cfg.seed, 0xD209u);
      step = [&, base](Network& net, const Batch& b, double lr, std::uint64_t s) {
        dropout_step(net, b, cfg, lr, mix_seed(base, s));
      };
      break;
    }
    default:
      throw Error(ErrorCode::invalid_argument, "train handles sgd, amo and dropout; use train_robust for " +
                                                   to_string(method));
  }
  return detail::run_epochs(init, cfg, train_set, validation, to_string(method), step);
}

}  // namespace allmargin::training
