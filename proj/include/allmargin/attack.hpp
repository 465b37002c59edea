#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "allmargin/network.hpp"

namespace allmargin {

// l_inf threat model around an input. Radius and box are in input units.
struct AttackSpec {
  double radius = 0.0;
  int steps = 20;
  double step_size = 0.0;  // 0 means radius / 4
  int restarts = 3;
  std::vector<double> box_lo;  // per-coordinate; empty means unbounded
  std::vector<double> box_hi;
  std::uint64_t seed = 1;

  double effective_step() const { return step_size > 0.0 ? step_size : radius / 4.0; }
  void validate(std::size_t input_dim) const;
};

// Clamps `candidate` into the l_inf ball around `center` and the box, coordinatewise.
void project_to_ball(std::span<double> candidate, std::span<const double> center, const AttackSpec& spec);

struct RestartOutcome {
  double final_loss = 0.0;
  bool misclassified = false;
};

struct AttackResult {
  std::vector<double> x_adv;
  double loss = 0.0;  // cross-entropy at x_adv
  bool misclassified = false;
  int restart = 0;
  std::vector<RestartOutcome> restarts;
  std::vector<std::vector<double>> visited;  // every iterate, when requested
};

// Signed-gradient ascent on the clean cross-entropy, projected after every
// step. Restart 0 starts at x, later restarts at a seeded uniform point of the
// ball. Returns the best iterate over all restarts: misclassified beats
// correct, then higher loss wins, then the earlier iterate.
AttackResult pgd_attack(const network::Network& net, std::span<const double> x, std::size_t y,
                        const AttackSpec& spec, bool keep_visited = false);

}  // namespace allmargin
