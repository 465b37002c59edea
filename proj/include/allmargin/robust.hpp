#pragma once

// Robust error under l_inf PGD, Madry-style adversarial training and robust AMO.

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "allmargin/attack.hpp"
#include "allmargin/data.hpp"
#include "allmargin/training.hpp"

namespace allmargin::robust {

using network::Network;
using training::Batch;
using training::StepResult;
using training::TrainConfig;

// l_inf ball of the given radius with step radius / 4.
inline AttackSpec linf_attack(double radius, int steps, int restarts) {
  AttackSpec s;
  s.radius = radius;
  s.steps = steps;
  s.step_size = radius / 4.0;
  s.restarts = restarts;
  return s;
}

struct RobustConfig {
  AttackSpec train_attack = linf_attack(8.0 / 255.0, 10, 1);
  AttackSpec eval_attack = linf_attack(8.0 / 255.0, 20, 3);
  bool delta_steps = true;   // false gives plain Madry training
  double delta_step = 6.4e-3;
  double delta_decay = 0.92;

  void validate(std::size_t input_dim) const;
};

nlohmann::json attack_to_json(const AttackSpec& spec);
// Unknown keys raise invalid_config.
AttackSpec attack_from_json(const nlohmann::json& j, const AttackSpec& defaults = {});

struct RobustEvaluation {
  double error = 0.0;        // any restart misclassifies, or the clean point already does
  double clean_error = 0.0;
  std::vector<AttackResult> attacks;  // per example
};

// Example i is attacked with seed mix_seed(spec.seed, i), so runs that differ
// only in radius share their random starts.
RobustEvaluation robust_evaluation(const Network& net, const data::Dataset& ds, const AttackSpec& spec,
                                   unsigned threads = 1);
double robust_error(const Network& net, const data::Dataset& ds, const AttackSpec& spec, unsigned threads = 1);

// One record per (example, restart): example_id, restart, final_loss, misclassified.
nlohmann::json attack_records(const RobustEvaluation& eval);

// Each inner iteration takes one signed PGD step on x' and, when enabled, one
// delta step delta <- decay delta + step grad_delta l, from the same gradient.
// x' starts at a seeded uniform point of the ball, delta at 0. The weight step
// uses the loss at the final (x', delta).
StepResult robust_update(Network& net, const Batch& batch, const TrainConfig& cfg, const RobustConfig& rc,
                         double lr, std::uint64_t step_seed);

// method is madry or robust-amo; madry ignores delta steps.
training::TrainResult train_robust(const Network& init, const TrainConfig& cfg, const data::Dataset& train_set,
                                   const data::Dataset& validation, training::Method method,
                                   const RobustConfig& rc);

}  // namespace allmargin::robust
