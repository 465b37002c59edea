#include "allmargin/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "allmargin/hash.hpp"

namespace allmargin::experiment {

namespace fs = std::filesystem;
using analytic::Theorem;
using network::Network;
using network::NormSpec;

namespace {

enum SeedStream : std::uint64_t { kData, kSplit, kCorrupt, kInit, kTraining, kSolver, kAttackSeed };

std::uint64_t derive(std::uint64_t seed, SeedStream s) { return mix_seed(seed, s); }

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::invalid_config, msg); }

void only_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) invalid(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "seed" && where != "config") invalid("'seed' is only allowed at the top level (" + where + ")");
    if (!known.count(key)) invalid("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    invalid("bad value for '" + std::string(key) + "' in " + where);
  }
}

double alpha_value(const nlohmann::json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string() && v.get<std::string>() == "inf") return kInfinity;
  invalid("norm alpha entries must be numbers or \"inf\"");
}

nlohmann::json alpha_json(double a) { return std::isinf(a) ? nlohmann::json("inf") : nlohmann::json(a); }

AttackSpec parse_attack(const nlohmann::json& j, const std::string& where) {
  if (j.is_object() && j.contains("seed")) invalid("'seed' is only allowed at the top level (" + where + ")");
  try {
    return robust::attack_from_json(j);
  } catch (const Error& e) {
    invalid(where + ": " + e.what());
  }
}

nlohmann::json attack_echo(const AttackSpec& s) {
  auto j = robust::attack_to_json(s);
  j.erase("seed");
  return j;
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
  only_keys(j, {"dataset", "network", "method", "train", "attack", "robust", "margin", "bound", "output", "seed", "threads"},
            "config");
  ExperimentConfig c;
  read(j, "seed", c.seed, "config");
  read(j, "threads", c.threads, "config");
  read(j, "output", c.output, "config");
  std::string method = training::to_string(c.method);
  read(j, "method", method, "config");
  try {
    c.method = training::method_from_string(method);
  } catch (const Error&) {
    invalid("unknown method '" + method + "'");
  }

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    only_keys(d, {"kind", "n", "noise", "images", "labels", "path", "validation_fraction", "corrupt_fraction"}, "dataset");
    read(d, "kind", c.dataset.kind, "dataset");
    read(d, "n", c.dataset.n, "dataset");
    read(d, "noise", c.dataset.noise, "dataset");
    read(d, "images", c.dataset.images, "dataset");
    read(d, "labels", c.dataset.labels, "dataset");
    read(d, "path", c.dataset.path, "dataset");
    read(d, "validation_fraction", c.dataset.validation_fraction, "dataset");
    read(d, "corrupt_fraction", c.dataset.corrupt_fraction, "dataset");
  }
  const auto& ds = c.dataset;
  static const std::set<std::string> synthetic = {"two-gaussians", "two-moons", "spirals"};
  if (ds.kind == "idx") {
    if (ds.images.empty() || ds.labels.empty()) invalid("dataset kind idx needs 'images' and 'labels'");
  } else if (ds.kind == "csv") {
    if (ds.path.empty()) invalid("dataset kind csv needs 'path'");
  } else if (!synthetic.count(ds.kind)) {
    invalid("unknown dataset kind '" + ds.kind + "'");
  } else if (ds.n < 2 || !(ds.noise >= 0.0)) {
    invalid("synthetic data needs n >= 2 and noise >= 0");
  }
  if (!(ds.validation_fraction >= 0.0 && ds.validation_fraction < 1.0))
    invalid("validation_fraction must lie in [0, 1)");
  if (!(ds.corrupt_fraction >= 0.0 && ds.corrupt_fraction <= 1.0)) invalid("corrupt_fraction must lie in [0, 1]");

  if (j.contains("network")) {
    const auto& n = j.at("network");
    only_keys(n, {"widths", "activation"}, "network");
    read(n, "widths", c.network.widths, "network");
    std::string act = autodiff::to_string(c.network.activation);
    read(n, "activation", act, "network");
    try {
      c.network.activation = autodiff::activation_from_string(act);
    } catch (const Error&) {
      invalid("unknown activation '" + act + "'");
    }
  }
  if (c.network.widths.size() < 2) invalid("network needs at least an input and an output width");
  for (std::size_t w : c.network.widths)
    if (w == 0) invalid("network widths must be positive");

  if (j.contains("train")) {
    if (j.at("train").is_object() && j.at("train").contains("margin_solver") &&
        j.at("train").at("margin_solver").is_object() && j.at("train").at("margin_solver").contains("seed"))
      invalid("'seed' is only allowed at the top level (train.margin_solver)");
    if (j.at("train").is_object() && j.at("train").contains("seed"))
      invalid("'seed' is only allowed at the top level (train)");
    c.train = training::train_config_from_json(j.at("train"));
  }

  if (j.contains("attack")) c.attack = parse_attack(j.at("attack"), "attack");
  if (j.contains("robust")) {
    const auto& r = j.at("robust");
    only_keys(r, {"train_attack", "delta_step", "delta_decay"}, "robust");
    if (r.contains("train_attack")) c.robust.train_attack = parse_attack(r.at("train_attack"), "robust.train_attack");
    read(r, "delta_step", c.robust.delta_step, "robust");
    read(r, "delta_decay", c.robust.delta_decay, "robust");
  } else if (c.attack) {
    c.robust.train_attack = robust::linf_attack(c.attack->radius, 10, 1);
    c.robust.train_attack.box_lo = c.attack->box_lo;
    c.robust.train_attack.box_hi = c.attack->box_hi;
  }
  if (c.attack) c.robust.eval_attack = *c.attack;
  if (!(c.robust.delta_step >= 0.0) || !(c.robust.delta_decay >= 0.0 && c.robust.delta_decay <= 1.0))
    invalid("robust needs delta_step >= 0 and delta_decay in [0, 1]");

  if (j.contains("margin")) {
    const auto& m = j.at("margin");
    only_keys(m, {"split", "max_examples", "placement", "scale", "norm", "solver"}, "margin");
    read(m, "split", c.margin.split, "margin");
    read(m, "max_examples", c.margin.max_examples, "margin");
    std::string placement = network::to_string(c.margin.problem.placement);
    std::string scale = network::to_string(c.margin.problem.scale);
    read(m, "placement", placement, "margin");
    read(m, "scale", scale, "margin");
    try {
      c.margin.problem.placement = network::placement_from_string(placement);
      c.margin.problem.scale = network::scale_mode_from_string(scale);
    } catch (const Error& e) {
      invalid(std::string("margin: ") + e.what());
    }
    if (m.contains("norm")) {
      const auto& n = m.at("norm");
      only_keys(n, {"alpha", "p"}, "margin.norm");
      NormSpec norm;
      read(n, "p", norm.p, "margin.norm");
      if (n.contains("alpha")) {
        if (!n.at("alpha").is_array()) invalid("margin.norm.alpha must be an array");
        for (const auto& a : n.at("alpha")) norm.alpha.push_back(alpha_value(a));
      }
      if (!(norm.p >= 1.0)) invalid("margin.norm.p must be >= 1");
      c.margin.problem.norm = norm;
    }
    if (m.contains("solver")) {
      const auto& s = m.at("solver");
      only_keys(s,
                {"ascent_steps", "ascent_rate", "ascent_growth", "bisection_tolerance", "max_bisections", "restarts",
                 "refine_iterations"},
                "margin.solver");
      auto& v = c.margin.solver;
      read(s, "ascent_steps", v.ascent_steps, "margin.solver");
      read(s, "ascent_rate", v.ascent_rate, "margin.solver");
      read(s, "ascent_growth", v.ascent_growth, "margin.solver");
      read(s, "bisection_tolerance", v.bisection_tolerance, "margin.solver");
      read(s, "max_bisections", v.max_bisections, "margin.solver");
      read(s, "restarts", v.restarts, "margin.solver");
      read(s, "refine_iterations", v.refine_iterations, "margin.solver");
    }
  }
  if (c.margin.split != "train" && c.margin.split != "validation") invalid("margin.split must be train or validation");
  try {
    c.margin.solver.validate();
  } catch (const Error& e) {
    invalid(std::string("margin.solver: ") + e.what());
  }

  if (j.contains("bound")) {
    const auto& b = j.at("bound");
    only_keys(b, {"theorem", "q", "confidence", "reference"}, "bound");
    std::string theorem = analytic::to_string(c.bound.theorem);
    read(b, "theorem", theorem, "bound");
    try {
      c.bound.theorem = analytic::theorem_from_string(theorem);
    } catch (const Error&) {
      invalid("unknown theorem '" + theorem + "'");
    }
    read(b, "q", c.bound.q, "bound");
    read(b, "confidence", c.bound.confidence, "bound");
    read(b, "reference", c.bound.reference, "bound");
  }
  if (c.bound.q < 1) invalid("bound.q must be >= 1");
  if (!(c.bound.confidence > 0.0 && c.bound.confidence < 1.0)) invalid("bound.confidence must lie in (0, 1)");
  if (c.bound.reference != "none" && c.bound.reference != "init") invalid("bound.reference must be none or init");
  if (c.bound.theorem == Theorem::adv_nn_gen && !c.attack) invalid("theorem adv-nn-gen needs an attack block");
  const bool robust_method = c.method == training::Method::madry || c.method == training::Method::robust_amo;
  if (robust_method && !c.attack) invalid("method " + training::to_string(c.method) + " needs an attack block");
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    invalid(std::string("cannot read config: ") + e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    invalid(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["output"] = c.output;
  j["method"] = training::to_string(c.method);
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"validation_fraction", c.dataset.validation_fraction},
                  {"corrupt_fraction", c.dataset.corrupt_fraction}};
  if (c.dataset.kind == "idx") {
    j["dataset"]["images"] = c.dataset.images;
    j["dataset"]["labels"] = c.dataset.labels;
  } else if (c.dataset.kind == "csv") {
    j["dataset"]["path"] = c.dataset.path;
  } else {
    j["dataset"]["n"] = c.dataset.n;
    j["dataset"]["noise"] = c.dataset.noise;
  }
  j["network"] = {{"widths", c.network.widths}, {"activation", autodiff::to_string(c.network.activation)}};
  auto train = training::to_json(c.train);
  train.erase("seed");
  train["margin_solver"].erase("seed");
  j["train"] = train;
  if (c.attack) j["attack"] = attack_echo(*c.attack);
  j["robust"] = {{"train_attack", attack_echo(c.robust.train_attack)},
                 {"delta_step", c.robust.delta_step},
                 {"delta_decay", c.robust.delta_decay}};
  nlohmann::json margin = {{"split", c.margin.split},
                           {"max_examples", c.margin.max_examples},
                           {"placement", network::to_string(c.margin.problem.placement)},
                           {"scale", network::to_string(c.margin.problem.scale)}};
  if (c.margin.problem.norm) {
    auto alpha = nlohmann::json::array();
    for (double a : c.margin.problem.norm->alpha) alpha.push_back(alpha_json(a));
    margin["norm"] = {{"alpha", alpha}, {"p", c.margin.problem.norm->p}};
  }
  const auto& s = c.margin.solver;
  margin["solver"] = {{"ascent_steps", s.ascent_steps},
                      {"ascent_rate", s.ascent_rate},
                      {"ascent_growth", s.ascent_growth},
                      {"bisection_tolerance", s.bisection_tolerance},
                      {"max_bisections", s.max_bisections},
                      {"restarts", s.restarts},
                      {"refine_iterations", s.refine_iterations}};
  j["margin"] = margin;
  j["bound"] = {{"theorem", analytic::to_string(c.bound.theorem)},
                {"q", c.bound.q},
                {"confidence", c.bound.confidence},
                {"reference", c.bound.reference}};
  return j;
}

namespace {

std::string cell(double v) { return std::isnan(v) ? "" : format_double(v); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::io_error, "failed writing " + path.string());
}

struct Data {
  data::Dataset train, validation;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, blob id
};

Data load_data(const ExperimentConfig& c) {
  Data d;
  data::Dataset pool;
  const auto& spec = c.dataset;
  if (spec.kind == "idx") {
    pool = data::load_idx(spec.images, spec.labels);
    d.inputs = {{spec.images, git_blob_sha1_file(spec.images)}, {spec.labels, git_blob_sha1_file(spec.labels)}};
  } else if (spec.kind == "csv") {
    pool = data::read_csv(spec.path);
    d.inputs = {{spec.path, git_blob_sha1_file(spec.path)}};
  } else {
    pool = data::gen_synthetic(spec.kind, spec.n, spec.noise, derive(c.seed, kData));
  }
  if (pool.size() == 0) throw Error(ErrorCode::empty_dataset, "dataset is empty");
  if (spec.validation_fraction > 0.0) {
    auto [train, val] = data::split_validation(pool, spec.validation_fraction, derive(c.seed, kSplit));
    d.train = std::move(train);
    d.validation = std::move(val);
  } else {
    d.train = std::move(pool);
  }
  if (spec.corrupt_fraction > 0.0) d.train = data::corrupt_labels(d.train, spec.corrupt_fraction, derive(c.seed, kCorrupt));
  return d;
}

void check_architecture(const Network& net, const data::Dataset& ds) {
  if (net.input_dim() != ds.dim())
    invalid("network input width " + std::to_string(net.input_dim()) + " does not match data dimension " +
            std::to_string(ds.dim()));
  if (net.class_count() != ds.classes)
    invalid("network output width " + std::to_string(net.output_dim()) + " does not fit " +
            std::to_string(ds.classes) + " classes");
}

struct Examples {
  std::string split;
  std::vector<std::vector<double>> xs;
  std::vector<std::size_t> ys;
};

Examples pick(const ExperimentConfig& c, const Data& d) {
  const data::Dataset& ds = c.margin.split == "train" ? d.train : d.validation;
  if (ds.size() == 0) invalid("margin split '" + c.margin.split + "' is empty");
  Examples e;
  e.split = c.margin.split;
  const std::size_t n = std::min(ds.size(), c.margin.max_examples);
  e.xs.assign(ds.inputs.begin(), ds.inputs.begin() + static_cast<std::ptrdiff_t>(n));
  e.ys.assign(ds.labels.begin(), ds.labels.begin() + static_cast<std::ptrdiff_t>(n));
  return e;
}

bool smooth(const Network& net) { return net.activation() != autodiff::Activation::relu; }

std::vector<margin::MarginResult> margins_of(const ExperimentConfig& c, const Network& net, const Examples& e,
                                             unsigned threads) {
  margin::SolverConfig solver = c.margin.solver;
  solver.seed = derive(c.seed, kSolver);
  return margin::estimate_margins(net, e.xs, e.ys, c.margin.problem, solver, threads);
}

std::string margins_csv(const ExperimentConfig& c, const Network& net, const Examples& e,
                        const std::vector<margin::MarginResult>& results) {
  const NormSpec norm = c.margin.problem.norm_for(net);
  std::string out = "# allmargin-margins v1 split=" + e.split +
                    " placement=" + network::to_string(c.margin.problem.placement) +
                    " scale=" + network::to_string(c.margin.problem.scale) + " p=" + format_double(norm.p) + "\n";
  out += "example_id,label,gamma,margin,kind,lower_bound\n";
  const bool bound_ok = smooth(net) && c.margin.problem.scale == network::ScaleMode::pre_scale;
  for (std::size_t i = 0; i < results.size(); ++i) {
    double lb = kNaN;
    if (bound_ok) {
      try {
        lb = analytic::margin_lower_bound(net, e.xs[i], e.ys[i], c.margin.problem).value;
      } catch (const Error&) {
        lb = kNaN;
      }
    }
    out += std::to_string(i) + "," + std::to_string(e.ys[i]) + "," + cell(results[i].gamma) + "," +
           cell(results[i].value) + "," + margin::to_string(results[i].kind) + "," + cell(lb) + "\n";
  }
  return out;
}

std::string kappa_csv(const Network& net, const Examples& e, unsigned threads) {
  std::string head = "# allmargin-kappa v1 split=" + e.split;
  const std::string columns = "example_id,layer,gamma,leading,psi,kappa_nn\n";
  if (!smooth(net)) return head + " status=requires-smooth-activation\n" + columns;
  auto reports = analytic::kappa_dataset(net, e.xs, e.ys, threads);
  std::string rows;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    if (r.kappa_nn.empty()) {
      ++skipped;
      continue;
    }
    for (std::size_t layer = 0; layer < r.kappa_nn.size(); ++layer)
      rows += std::to_string(i) + "," + std::to_string(layer + 1) + "," + cell(r.gamma) + "," + cell(r.leading[layer]) +
              "," + cell(r.psi[layer]) + "," + cell(r.kappa_nn[layer]) + "\n";
  }
  return head + " status=ok misclassified_skipped=" + std::to_string(skipped) + "\n" + columns + rows;
}

nlohmann::json bound_json(const ExperimentConfig& c, const Network& net, const Network& init, const Examples& e,
                          const std::vector<margin::MarginResult>* margins, unsigned threads) {
  nlohmann::json out;
  out["schema"] = "allmargin-bound v1";
  out["split"] = e.split;
  out["examples"] = e.xs.size();
  try {
    const NormSpec norm = c.margin.problem.norm_for(net);
    std::vector<autodiff::Tensor> refs;
    if (c.bound.reference == "init") refs = init.weights();
    const auto complexity = analytic::complexity_report(net, norm, refs, refs);
    analytic::BoundInput in;
    in.theorem = c.bound.theorem;
    in.q = c.bound.q;
    in.confidence = c.bound.confidence;
    switch (c.bound.theorem) {
      case Theorem::simple:
      case Theorem::compl_m_gen: {
        std::vector<margin::MarginResult> computed;
        if (!margins) {
          computed = margins_of(c, net, e, threads);
          margins = &computed;
        }
        for (const auto& m : *margins) in.margins.push_back(m.value);
        in.complexities = complexity.layer_c;
        in.norm = norm;
        break;
      }
      case Theorem::nn_gen:
      case Theorem::adv_nn_gen:
      case Theorem::smooth_gen: {
        in.kappas.resize(e.xs.size());
        parallel_for(e.xs.size(), threads, [&](std::size_t i) {
          if (!network::forward_trace(net, e.xs[i], e.ys[i]).correct) return;
          if (c.bound.theorem == Theorem::nn_gen)
            in.kappas[i] = analytic::kappa_nn(net, e.xs[i], e.ys[i]).kappa_nn;
          else if (c.bound.theorem == Theorem::adv_nn_gen) {
            AttackSpec s = *c.attack;
            s.seed = mix_seed(derive(c.seed, kAttackSeed), i);
            in.kappas[i] = analytic::kappa_adv(net, e.xs[i], e.ys[i], s).kappa_adv;
          } else {
            in.kappas[i] = analytic::kappa_star(net, e.xs[i], e.ys[i]).kappa_star;
          }
        });
        for (const auto& row : in.kappas)
          if (row.empty())
            throw Error(ErrorCode::theorem_precondition_violated,
                        "a training example is misclassified; the theorem needs training error 0");
        in.complexities = c.bound.theorem == Theorem::smooth_gen ? complexity.layer_c : complexity.a;
        break;
      }
    }
    auto report = analytic::to_json(analytic::bound_report(in));
    for (const auto& [key, value] : report.items()) out[key] = value;
    out["status"] = "ok";
  } catch (const Error& err) {
    out["status"] = to_string(err.code());
    out["message"] = err.what();
    out["theorem"] = analytic::to_string(c.bound.theorem);
  }
  return out;
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace

RunSummary run(const ExperimentConfig& c, const RunOptions& options) {
  const unsigned threads = resolve_threads(c.threads ? c.threads : c.train.threads);
  Data d = load_data(c);
  const Network init = network::init_network(c.network.widths, c.network.activation, derive(c.seed, kInit));
  Network net = options.network ? network::load_network(*options.network) : init;
  check_architecture(net, d.train);
  if (d.validation.size() > 0) check_architecture(net, d.validation);

  fs::create_directories(c.output);
  const fs::path dir = c.output;
  RunSummary summary;
  std::map<std::string, std::string> artifacts;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    artifacts[name] = git_blob_sha1(text);
    summary.artifacts.push_back(name);
  };

  if ((options.stages & kTrain) && !options.network) {
    training::TrainConfig tc = c.train;
    tc.seed = derive(c.seed, kTraining);
    tc.threads = threads;
    training::TrainResult res = [&] {
      if (c.method == training::Method::madry || c.method == training::Method::robust_amo)
        return robust::train_robust(init, tc, d.train, d.validation, c.method, c.robust);
      return training::train(init, tc, d.train, d.validation, c.method);
    }();
    net = std::move(res.net);
    emit("train_record.csv", training::to_csv(res.record));
  }
  summary.final_train_error = training::evaluate(net, d.train, threads).error;

  const Examples e = pick(c, d);
  std::vector<margin::MarginResult> margins;
  if (options.stages & kMargins) {
    margins = margins_of(c, net, e, threads);
    emit("margins.csv", margins_csv(c, net, e, margins));
  }
  if (options.stages & kKappas) emit("kappa.csv", kappa_csv(net, e, threads));
  if (options.stages & kBound) {
    auto b = bound_json(c, net, init, e, (options.stages & kMargins) ? &margins : nullptr, threads);
    summary.bound_status = b["status"];
    emit("bound.json", dump(b));
  }
  if ((options.stages & kAttack) && c.attack) {
    const data::Dataset& target = d.validation.size() > 0 ? d.validation : d.train;
    AttackSpec spec = *c.attack;
    spec.seed = derive(c.seed, kAttackSeed);
    auto ev = robust::robust_evaluation(net, target, spec, threads);
    nlohmann::json j = {{"schema", "allmargin-attacks v1"},
                        {"split", d.validation.size() > 0 ? "validation" : "train"},
                        {"attack", attack_echo(spec)},
                        {"robust_error", ev.error},
                        {"clean_error", ev.clean_error},
                        {"records", robust::attack_records(ev)}};
    emit("attacks.json", dump(j));
  }
  nlohmann::json checkpoint = network::to_json(net);
  checkpoint["config"] = to_json(c);
  checkpoint["config"].erase("output");
  checkpoint["config"].erase("threads");
  emit("network.json", dump(checkpoint));

  nlohmann::json manifest = {{"schema", "allmargin-manifest v1"}, {"seed", c.seed}, {"config", to_json(c)}};
  manifest["artifacts"] = artifacts;
  nlohmann::json inputs = nlohmann::json::object();
  for (const auto& [path, sha] : d.inputs) inputs[path] = sha;
  if (options.network) inputs[options.network->string()] = git_blob_sha1_file(*options.network);
  manifest["inputs"] = inputs;
  manifest["final_train_error"] = summary.final_train_error;
  write_text(dir / "manifest.json", dump(manifest));
  summary.artifacts.push_back("manifest.json");
  return summary;
}

namespace {

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const fs::path& from) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw Error(ErrorCode::malformed_input, from.string() + " has no '" + name + "' column");
    return static_cast<std::size_t>(it - columns.begin());
  }
};

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Table read_table(const fs::path& path) {
  std::istringstream in(read_file(path));
  Table t;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_line(line);
    if (!header) {
      t.columns = fields;
      header = true;
      continue;
    }
    if (fields.size() != t.columns.size())
      throw Error(ErrorCode::malformed_input, path.string() + ": row has " + std::to_string(fields.size()) +
                                                  " fields, header has " + std::to_string(t.columns.size()));
    t.rows.push_back(std::move(fields));
  }
  if (!header) throw Error(ErrorCode::malformed_input, path.string() + " has no header row");
  return t;
}

double number(const std::string& s, const fs::path& from) {
  if (s == "inf") return kInfinity;
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::malformed_input, from.string() + ": bad number '" + s + "'");
}

struct Point {
  std::string series;
  double x, y;
};

}  // namespace

std::string plot_data(const std::string& kind, const std::vector<fs::path>& inputs, std::size_t bins) {
  std::vector<Point> points;
  if (kind == "margin-histogram") {
    if (bins == 0) throw Error(ErrorCode::invalid_argument, "bins must be >= 1");
    std::vector<std::pair<std::string, std::vector<double>>> series;
    double top = 0.0;
    for (const auto& path : inputs) {
      Table t = read_table(path);
      const std::size_t col = t.column("margin", path);
      std::vector<double> values;
      for (const auto& row : t.rows) {
        double v = number(row[col], path);
        if (!(v >= 0.0)) throw Error(ErrorCode::malformed_input, path.string() + ": negative margin");
        if (std::isfinite(v)) top = std::max(top, v);
        values.push_back(v);
      }
      series.emplace_back(path.stem().string(), std::move(values));
    }
    const double width = (top > 0.0 ? top : 1.0) / static_cast<double>(bins);
    for (const auto& [name, values] : series) {
      if (values.empty()) continue;
      std::vector<std::size_t> counts(bins, 0);
      for (double v : values) {
        std::size_t b = std::isfinite(v) ? static_cast<std::size_t>(v / width) : bins - 1;
        ++counts[std::min(b, bins - 1)];
      }
      for (std::size_t b = 0; b < bins; ++b)
        points.push_back({name, (static_cast<double>(b) + 0.5) * width, static_cast<double>(counts[b])});
    }
  } else if (kind == "error-curve") {
    for (const auto& path : inputs) {
      Table t = read_table(path);
      const std::size_t epoch = t.column("epoch", path), split = t.column("split", path),
                        error = t.column("error", path);
      const auto robust_it = std::find(t.columns.begin(), t.columns.end(), "robust_error");
      for (const auto& row : t.rows) {
        const std::string name = path.stem().string() + ":" + row[split];
        points.push_back({name, number(row[epoch], path), number(row[error], path)});
        if (robust_it != t.columns.end()) {
          const auto& r = row[static_cast<std::size_t>(robust_it - t.columns.begin())];
          if (!r.empty()) points.push_back({name + ":robust", number(row[epoch], path), number(r, path)});
        }
      }
    }
  } else if (kind == "bound-vs-n") {
    for (const auto& path : inputs) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(read_file(path));
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::malformed_input, path.string() + " is not valid JSON");
      }
      if (!j.is_object() || !j.contains("status")) throw Error(ErrorCode::malformed_input, path.string() + " is not a bound report");
      if (j["status"] != "ok") continue;
      try {
        points.push_back({j.at("theorem").get<std::string>(), j.at("n").get<double>(),
                          j.at("total").is_null() ? kInfinity : j.at("total").get<double>()});
      } catch (const nlohmann::json::exception&) {
        throw Error(ErrorCode::malformed_input, path.string() + " lacks theorem, n or total");
      }
    }
    std::stable_sort(points.begin(), points.end(), [](const Point& a, const Point& b) {
      return a.series != b.series ? a.series < b.series : a.x < b.x;
    });
  } else {
    throw Error(ErrorCode::unknown_kind, "unknown plot kind '" + kind + "'");
  }
  std::string out = "# allmargin-plot v1 kind=" + kind + "\nseries,x,y\n";
  for (const auto& p : points) out += p.series + "," + format_double(p.x) + "," + format_double(p.y) + "\n";
  return out;
}

}  // namespace allmargin::experiment
