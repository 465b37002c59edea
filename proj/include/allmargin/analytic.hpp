#pragma once

// Closed-form quantities around the all-layer margin: Jacobian-based
// Lipschitz constants, analytic margin lower bounds, layer complexities, the
// Gaussian-tail surrogate loss and numeric evaluation of the bound formulas.
// log is the natural logarithm throughout.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "allmargin/attack.hpp"
#include "allmargin/margin.hpp"
#include "allmargin/network.hpp"

namespace allmargin::analytic {

using margin::MarginProblem;
using margin::MarginResult;
using network::Network;
using network::NormSpec;
using network::Tensor;

struct KappaReport {
  double gamma = 0.0;
  std::vector<double> hidden_norms;  // ||h_j||, j = 0..k
  double kappa_prime = 0.0;          // of the activation

  // Per linear layer i = 1..r.
  std::vector<double> leading;                 // s_(i-1) kappa_{2r-1<-2i} / gamma
  std::vector<std::array<double, 3>> psi_sums; // the three sums of psi_(i)
  std::vector<double> psi;
  std::vector<double> kappa_nn;                // leading + psi
  std::vector<double> kappa_adv;               // filled by kappa_adv() only

  // Per layer j = 1..k; filled by kappa_star() only.
  std::vector<double> layer_kappa_prime;
  std::vector<std::array<double, 3>> star_blocks;
  std::vector<double> kappa_star;
};

// kappa^NN_(i) with its secondary term psi_(i). Needs gamma > 0 and a smooth activation.
KappaReport kappa_nn(const Network& net, std::span<const double> x, std::size_t y);

// Generalized per-layer constant kappa*_j. `layer_kappa_prime` holds the
// Lipschitz constant of Df_j per layer; empty means 0 on linear layers and
// the activation's constant on activation layers.
KappaReport kappa_star(const Network& net, std::span<const double> x, std::size_t y,
                       std::span<const double> layer_kappa_prime = {});

// kappa^NN maximized over x and the points visited by pgd_attack in the ball.
// An under-estimate of the true max. Entries are infinite when some visited
// point is misclassified.
KappaReport kappa_adv(const Network& net, std::span<const double> x, std::size_t y, const AttackSpec& ball);

// Without a problem: 1 / ||kappa^NN||_2 (perturbations on linear layers,
// alpha = 1, p = 2). With a problem: 1 / ||(kappa*_j / alpha_j)_j||_{p/(p-1)}
// over the layers its placement allows. Pre-scale perturbations only.
// Misclassified points give 0.
MarginResult margin_lower_bound(const Network& net, std::span<const double> x, std::size_t y,
                                const std::optional<MarginProblem>& problem = std::nullopt);

// min{sqrt(d) ||W - A||_F, ||W - B||_{1,1}} sqrt(log d).
double layer_complexity(const Tensor& w, const Tensor& a, const Tensor& b, std::size_t d);
double layer_complexity(const Tensor& w, std::size_t d);

// (sum_i (alpha_i C_i)^{2p/(p+2)})^{(p+2)/(2p)}; an infinite alpha needs C_i = 0.
double composite_complexity(std::span<const double> alpha, double p, std::span<const double> c);

struct ComplexityReport {
  std::size_t d = 0;
  std::vector<double> a;        // a_(i), i = 1..r
  std::vector<double> layer_c;  // C_j, j = 1..k: a on linear layers, 0 on activations
  NormSpec norm;
  double c_gnorm = 0.0;
};

// Reference matrices default to zero; `a_refs` / `b_refs` hold one matrix per W_(i).
ComplexityReport complexity_report(const Network& net, const NormSpec& norm,
                                   std::span<const Tensor> a_refs = {}, std::span<const Tensor> b_refs = {});

// l_beta(m) = 1 for m <= 0, else 2 P(Z >= m sqrt(beta)).
double surrogate_loss(double m, double beta);

struct AlphaSolution {
  std::vector<double> alpha;
  double value = 0.0;        // E(alpha)
  double upper_bound = 0.0;  // 2 (sum (z_i b_i)^{2/3})^{3q/(q+2)}
  bool holds = false;        // value <= upper_bound up to 1e-12 relative
};

// E(alpha) = sum z_i^q / alpha_i^q + (sum (alpha_i b_i)^{2q/(3q-2)})^{(3q-2)/q}.
double alpha_objective(std::span<const double> alpha, std::span<const double> z, std::span<const double> b, int q);
AlphaSolution optimal_alpha(std::span<const double> z, std::span<const double> b, int q);

enum class Theorem { simple, compl_m_gen, nn_gen, adv_nn_gen, smooth_gen };

std::string to_string(Theorem t);
Theorem theorem_from_string(const std::string& name);

struct BoundInput {
  Theorem theorem = Theorem::simple;
  int q = 2;
  double confidence = 0.05;  // delta_c
  // simple, compl_m_gen: one margin per example.
  std::vector<double> margins;
  // nn_gen, adv_nn_gen, smooth_gen: one row of per-layer kappas per example.
  std::vector<std::vector<double>> kappas;
  // C_i per layer (simple, compl_m_gen, smooth_gen) or a_(i) (nn_gen, adv_nn_gen).
  std::vector<double> complexities;
  std::optional<NormSpec> norm;  // compl_m_gen; default alpha = 1, p = 2
};

struct BoundReport {
  Theorem theorem = Theorem::simple;
  std::size_t n = 0;
  int q = 2;
  double confidence = 0.05;
  double inverse_margin_moment = 0.0;     // ||1/m||_{L_q(P_n)}; L_2 for simple
  std::vector<double> kappa_moments;      // ||kappa_i||_{L_q(P_n)}
  std::vector<double> complexities;
  double c_gnorm = 0.0;
  double beta = 1.0;                      // smoothness of l_beta behind the bound
  double leading = 0.0;
  double zeta = 0.0;
  double total = 0.0;
  std::optional<AlphaSolution> alpha;     // closed-form alpha for the kappa variants
};

inline constexpr const char* kConstantsPolicy =
    "suppressed absolute constants set to 1; natural log; poly(1/n) terms set to 0; "
    "zeta is a labeled convention";

BoundReport bound_report(const BoundInput& in);
nlohmann::json to_json(const BoundReport& report);

// kappa_nn per example; misclassified examples get an empty report.
std::vector<KappaReport> kappa_dataset(const Network& net, std::span<const std::vector<double>> xs,
                                       std::span<const std::size_t> ys, unsigned threads = 1);

}  // namespace allmargin::analytic
