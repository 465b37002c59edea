#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "allmargin/experiment.hpp"
#include "allmargin/hash.hpp"
#include "allmargin/verify.hpp"

using namespace allmargin;
namespace fs = std::filesystem;

namespace {

constexpr int kExitInvalidConfig = 1;
constexpr int kExitRuntime = 2;

int fail(const std::string& code, const std::string& message, int status) {
  nlohmann::json j = {{"error", code}, {"message", message}};
  std::cerr << j.dump() << "\n";
  return status;
}

struct Common {
  std::string config, out, network;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

experiment::ExperimentConfig resolve(const Common& c, const CLI::App& sub) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(c.config));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("config is not valid JSON: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::invalid_config, std::string("cannot read config: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, "config must be a JSON object");
  if (sub.count("--seed")) j["seed"] = c.seed;
  if (sub.count("--out")) j["output"] = c.out;
  auto cfg = experiment::config_from_json(j);
  if (sub.count("--threads")) cfg.threads = c.threads;
  return cfg;
}

void add_common(CLI::App* sub, Common& c, bool needs_network) {
  sub->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "output directory (overrides config)");
  sub->add_option("--seed", c.seed, "master seed (overrides config)");
  sub->add_option("--threads", c.threads, "worker threads; defaults to ALLMARGIN_THREADS or 1");
  auto* opt = sub->add_option("--network", c.network, "trained network checkpoint");
  if (needs_network) opt->required()->check(CLI::ExistingFile);
}

void print_summary(const experiment::ExperimentConfig& cfg, const experiment::RunSummary& s) {
  nlohmann::json j = {{"output", cfg.output}, {"artifacts", s.artifacts}, {"final_train_error", s.final_train_error}};
  if (!s.bound_status.empty()) j["bound_status"] = s.bound_status;
  std::cout << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"allmargin: margin estimation, margin-driven training and generalization bounds"};
  app.require_subcommand(1);

  Common run_opts, margin_opts, attack_opts, bound_opts;
  auto* run = app.add_subcommand("run", "train, then write margins, kappas, bound, attacks and manifest");
  add_common(run, run_opts, false);
  auto* margin = app.add_subcommand("margin", "margins and kappas of a trained network");
  add_common(margin, margin_opts, true);
  auto* attack = app.add_subcommand("attack", "PGD robust error of a trained network");
  add_common(attack, attack_opts, true);
  auto* bound = app.add_subcommand("bound", "generalization bound report of a trained network");
  add_common(bound, bound_opts, true);

  std::string plot_kind, plot_out;
  std::vector<std::string> plot_inputs;
  std::size_t bins = 10;
  auto* plot = app.add_subcommand("plot-data", "long-format series,x,y CSV for plotting");
  plot->add_option("--kind", plot_kind, "margin-histogram, error-curve or bound-vs-n")->required();
  plot->add_option("--bins", bins, "histogram bins");
  plot->add_option("--out", plot_out, "output file (default stdout)");
  plot->add_option("inputs", plot_inputs, "metric files")->required()->check(CLI::ExistingFile);

  std::uint64_t grad_seed = 1;
  std::size_t grad_points = 100;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  grad->add_option("--seed", grad_seed, "seed");
  grad->add_option("--points", grad_points, "random points per case");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("invalid_config", e.what(), kExitInvalidConfig);
  }

  try {
    if (run->parsed()) {
      auto cfg = resolve(run_opts, *run);
      experiment::RunOptions options;
      if (!run_opts.network.empty()) options.network = run_opts.network;
      print_summary(cfg, experiment::run(cfg, options));
    } else if (margin->parsed() || attack->parsed() || bound->parsed()) {
      const CLI::App* sub = margin->parsed() ? margin : attack->parsed() ? attack : bound;
      const Common& c = margin->parsed() ? margin_opts : attack->parsed() ? attack_opts : bound_opts;
      auto cfg = resolve(c, *sub);
      experiment::RunOptions options;
      options.network = c.network;
      if (margin->parsed()) {
        options.stages = experiment::kMargins | experiment::kKappas;
      } else if (attack->parsed()) {
        if (!cfg.attack) throw Error(ErrorCode::invalid_config, "config has no attack block");
        options.stages = experiment::kAttack;
      } else {
        options.stages = experiment::kBound;
      }
      print_summary(cfg, experiment::run(cfg, options));
    } else if (plot->parsed()) {
      std::vector<fs::path> inputs(plot_inputs.begin(), plot_inputs.end());
      const std::string text = experiment::plot_data(plot_kind, inputs, bins);
      if (plot_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(plot_out, std::ios::binary);
        out << text;
        if (!out) throw Error(ErrorCode::io_error, "cannot write " + plot_out);
      }
    } else if (grad->parsed()) {
      auto report = verify::gradient_suite(grad_seed, grad_points);
      nlohmann::json cases = nlohmann::json::array();
      for (const auto& c : report.cases)
        cases.push_back({{"name", c.name},
                         {"checks", c.checks},
                         {"nonsmooth", c.nonsmooth},
                         {"refined", c.refined},
                         {"max_rel_error", c.max_rel_error}});
      nlohmann::json j = {{"points", report.points},
                          {"tolerance", report.tolerance},
                          {"max_rel_error", report.max_rel_error},
                          {"passed", report.passed()},
                          {"cases", cases}};
      std::cout << j.dump(2) << "\n";
      if (!report.passed()) return fail("gradient_mismatch", "max relative error above tolerance", kExitRuntime);
    }
  } catch (const Error& e) {
    return fail(to_string(e.code()), e.what(), e.code() == ErrorCode::invalid_config ? kExitInvalidConfig : kExitRuntime);
  } catch (const std::exception& e) {
    return fail("runtime_error", e.what(), kExitRuntime);
  }
  return 0;
}
