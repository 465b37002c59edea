#pragma once

// Plain SGD, all-layer margin optimization (AMO) and a dropout baseline.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "allmargin/data.hpp"
#include "allmargin/margin.hpp"
#include "allmargin/network.hpp"

namespace allmargin::training {

using network::Network;
using network::PerturbationSet;
using network::Placement;
using network::ScaleMode;

enum class Method { sgd, amo, dropout, madry, robust_amo };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 10;
  std::size_t batch_size = 32;
  double lr = 0.1;
  double lr_decay = 0.1;            // multiplied in at each milestone
  std::vector<int> lr_milestones;   // epochs (0-based) where the decay applies
  double weight_decay = 0.0;
  int t = 1;
  double eta_perturb = 0.01;
  double lambda = 0.0;
  bool literal_gradient = false;    // ascend grad G = grad l - 2 lambda delta instead of the printed rule
  Placement placement = Placement::linear_only;
  ScaleMode scale = ScaleMode::post_scale;
  double dropout = 0.1;
  std::uint64_t seed = 1;
  unsigned threads = 0;             // 0: ALLMARGIN_THREADS or 1
  int eval_every = 1;               // metrics every n epochs and after the last one
  std::size_t margin_samples = 0;   // correctly classified train points per margin estimate
  margin::SolverConfig margin_solver;

  void validate() const;
  double lr_at(int epoch) const;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Missing keys keep their defaults; unknown keys raise invalid_config.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRow {
  int epoch = 0;
  std::string split;
  double error = 0.0;
  double loss = 0.0;
  double mean_margin = kNaN;   // NaN when not measured
  double robust_error = kNaN;  // NaN when not measured
};

struct TrainRecord {
  std::string method;
  std::vector<EpochRow> rows;
  double wall_seconds = 0.0;  // kept out of the CSV so reruns are byte-identical
};

std::string to_csv(const TrainRecord& rec);
TrainRecord train_record_from_csv(const std::string& text);

struct Objective {
  double value = 0.0;
  PerturbationSet gradient;
};

// G = l(F(x, delta), y) - lambda ||delta||_2^2 and its delta-gradient.
Objective perturbed_objective(const Network& net, std::span<const double> x, std::size_t y,
                              const PerturbationSet& delta, double lambda,
                              ScaleMode scale = ScaleMode::pre_scale);

struct Batch {
  std::vector<std::span<const double>> x;
  std::vector<std::size_t> y;

  std::size_t size() const noexcept { return y.size(); }
};

Batch make_batch(const data::Dataset& ds, std::span<const std::size_t> indices);

struct StepResult {
  double loss = 0.0;                    // mean loss at the perturbations used for the weight step
  std::vector<PerturbationSet> deltas;  // AMO only
};

// Theta <- (1 - lr wd) Theta - lr mean grad.
StepResult sgd_step(Network& net, const Batch& batch, const TrainConfig& cfg, double lr);
// t ascent steps on per-example deltas from 0, then one weight step on the perturbed loss.
StepResult amo_update(Network& net, const Batch& batch, const TrainConfig& cfg, double lr);
// Independent inverted-dropout masks after every hidden activation; masks_seed picks the draw.
StepResult dropout_step(Network& net, const Batch& batch, const TrainConfig& cfg, double lr,
                        std::uint64_t masks_seed);

struct Metrics {
  double error = 0.0;
  double loss = 0.0;
};

Metrics evaluate(const Network& net, const data::Dataset& ds, unsigned threads = 1);

// Mean estimated all-layer margin over the first `samples` correctly classified examples.
double mean_margin(const Network& net, const data::Dataset& ds, std::size_t samples,
                   const margin::SolverConfig& solver, unsigned threads = 1);

struct TrainResult {
  Network net;
  TrainRecord record;
};

// method is sgd, amo or dropout. The validation set may be empty.
TrainResult train(const Network& init, const TrainConfig& cfg, const data::Dataset& train_set,
                  const data::Dataset& validation, Method method);

namespace detail {
// Shared epoch loop: shuffles, batches, calls step(net, batch, lr, step_index), logs metrics.
using StepFn = std::function<void(Network&, const Batch&, double, std::uint64_t)>;
using ExtraMetrics = std::function<void(const Network&, const data::Dataset&, EpochRow&)>;
TrainResult run_epochs(const Network& init, const TrainConfig& cfg, const data::Dataset& train_set,
                       const data::Dataset& validation, const std::string& method, const StepFn& step,
                       const ExtraMetrics& extra = {});

// Per-example weight gradients reduced in example order, then the weight step.
void apply_gradients(Network& net, const std::vector<std::vector<autodiff::Tensor>>& grads,
                     const TrainConfig& cfg, double lr);
}  // namespace detail

}  // namespace allmargin::training
