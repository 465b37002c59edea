#pragma once

// All-layer margin: the smallest |||delta||| whose perturbed forward pass is
// misclassified (gamma <= 0, so ties count as errors).

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "allmargin/attack.hpp"
#include "allmargin/network.hpp"

namespace allmargin::margin {

using network::Network;
using network::NormSpec;
using network::PerturbationSet;
using network::Placement;
using network::ScaleMode;

enum class MarginKind { exact_linear, pga_upper_estimate, brute_force, analytic_lower_bound, unbounded_at_budget };

std::string to_string(MarginKind k);

struct MarginResult {
  double value = 0.0;
  std::optional<PerturbationSet> feasible_delta;
  MarginKind kind = MarginKind::pga_upper_estimate;
  int iterations = 0;
  double gamma = 0.0;               // clean output margin
  double slack = 0.0;               // brute force: value may exceed the true margin by this much
  double largest_norm_tried = 0.0;  // unbounded_at_budget only
  std::vector<double> input;        // adversarial margin: the input that attained `value`
};

// Which perturbations are allowed, how they are scaled, and how they are measured.
struct MarginProblem {
  Placement placement = Placement::all_layers;
  ScaleMode scale = ScaleMode::pre_scale;
  std::optional<NormSpec> norm;  // default: alpha = 1 on every layer, p = 2

  NormSpec norm_for(const Network& net) const;
};

struct SolverConfig {
  int ascent_steps = 200;
  double ascent_rate = 0.02;      // first step length, in normalized units
  double ascent_growth = 1.05;    // per-step growth of the step length
  double bisection_tolerance = 1e-4;  // relative
  int max_bisections = 60;
  int restarts = 4;
  int refine_iterations = 30;
  std::uint64_t seed = 1;

  void validate() const;
};

MarginResult estimate_margin(const Network& net, std::span<const double> x, std::size_t y,
                             const MarginProblem& problem = {}, const SolverConfig& cfg = {});

// Closed form for single-layer nets F(x) = W x.
MarginResult exact_linear_margin(const Network& net, std::span<const double> x, std::size_t y,
                                 const MarginProblem& problem = {});

// A probe pass over [-radius, radius]^D bounds the margin by U; the main pass
// then covers the box implied by U with spacing min(resolution, box /
// relative_cells), and the spacing is halved twice around the best cell.
struct GridSpec {
  double radius = 2.0;
  double resolution = 0.05;
  long probe_cells = 8;
  long relative_cells = 20;
  std::size_t max_dimension = 6;
};

// Exhaustive grid search over delta; refuses more than max_dimension coordinates.
MarginResult brute_force_margin(const Network& net, std::span<const double> x, std::size_t y,
                                const MarginProblem& problem = {}, const GridSpec& grid = {});

struct LipschitzGapReport {
  std::vector<double> margin_a, margin_b, gap;
  std::vector<double> layer_gaps;  // |||f_j - g_j||| per layer
  double rhs = 0.0;                // ||(alpha_j |||f_j - g_j|||)_j||_p
  double slack = 0.0;              // largest grid slack among the margins used
  std::size_t violations = 0;      // gap > rhs + 2 slack
  bool exact = false;              // closed-form margins were used
};

LipschitzGapReport margin_lipschitz_gap(const Network& a, const Network& b,
                                        std::span<const std::vector<double>> xs,
                                        std::span<const std::size_t> ys, const MarginProblem& problem = {},
                                        const GridSpec& grid = {});

// Upper estimate of min over x' in the l_inf ball of m_F(x', y).
MarginResult adversarial_margin(const Network& net, std::span<const double> x, std::size_t y,
                                const AttackSpec& ball, const MarginProblem& problem = {},
                                const SolverConfig& cfg = {});

// estimate_margin over a dataset; example i uses seed mix_seed(cfg.seed, i).
std::vector<MarginResult> estimate_margins(const Network& net, std::span<const std::vector<double>> xs,
                                           std::span<const std::size_t> ys, const MarginProblem& problem,
                                           const SolverConfig& cfg, unsigned threads = 1);

}  // namespace allmargin::margin
