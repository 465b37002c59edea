#pragma once

// Bias-free feedforward classifier F(x) = W_(r) phi(... phi(W_(1) x)).
//
// Layers are numbered 1..k with k = 2r - 1: odd layer 2i-1 applies W_(i),
// even layer 2i applies phi. h_0 = x and h_j is the output of layer j.
// Output width 1 is a binary score (label 1 <-> +1, label 0 <-> -1);
// otherwise the output is a logit vector and labels are class indices.

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "allmargin/autodiff.hpp"
#include "allmargin/common.hpp"

namespace allmargin::network {

using autodiff::Activation;
using autodiff::Tensor;

inline constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
inline constexpr int kFormatVersion = 1;

class Network {
 public:
  Network(std::vector<std::size_t> widths, Activation activation, std::vector<Tensor> weights);

  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  Activation activation() const noexcept { return activation_; }
  const std::vector<Tensor>& weights() const noexcept { return weights_; }
  std::vector<Tensor>& weights() noexcept { return weights_; }
  // W_(i) for 1-based i.
  const Tensor& weight(std::size_t i) const { return weights_.at(i - 1); }

  std::size_t r() const noexcept { return weights_.size(); }
  std::size_t k() const noexcept { return 2 * weights_.size() - 1; }
  std::size_t input_dim() const noexcept { return widths_.front(); }
  std::size_t output_dim() const noexcept { return widths_.back(); }
  std::size_t max_width() const;
  bool binary() const noexcept { return output_dim() == 1; }
  std::size_t class_count() const noexcept { return binary() ? 2 : output_dim(); }
  // Width of h_j, j = 0..k.
  std::size_t layer_width(std::size_t j) const { return widths_.at((j + 1) / 2); }

  // Lipschitz constant of phi' (infinity for relu).
  double kappa_prime() const;

  bool same_architecture(const Network& other) const;

 private:
  std::vector<std::size_t> widths_;
  Activation activation_;
  std::vector<Tensor> weights_;
};

// LeCun-uniform fan-in init, U(-sqrt(3/fan_in), sqrt(3/fan_in)), from Rng(seed).
Network init_network(const std::vector<std::size_t>& widths, Activation activation,
                     std::uint64_t seed);

// max |phi''| on a 10^6-point grid over [-20, 20]; computed once per activation.
double kappa_prime(Activation a);

enum class Placement { all_layers, linear_only, post_block };
enum class ScaleMode { pre_scale, post_scale };

std::string to_string(Placement p);
std::string to_string(ScaleMode m);
Placement placement_from_string(const std::string& s);
ScaleMode scale_mode_from_string(const std::string& s);

// Whether layer j (1-based) of a k-layer net carries a perturbation.
// post_block perturbs every activation layer and the final linear layer.
bool placement_allows(Placement p, std::size_t j, std::size_t k);

// Weighted norm |||delta||| = ||(alpha_j ||delta_j||)_j||_p; alpha_j = inf freezes layer j.
struct NormSpec {
  std::vector<double> alpha;
  double p = 2.0;

  static NormSpec uniform(std::size_t k, double p = 2.0) { return {std::vector<double>(k, 1.0), p}; }
};

struct PerturbationSet {
  Placement placement = Placement::all_layers;
  std::vector<std::vector<double>> deltas;  // k entries; empty where not allowed
  NormSpec norm;

  // Layer j (1-based) is free to move: allowed by placement and alpha finite.
  bool active(std::size_t j) const;
  std::size_t dimension() const;
};

PerturbationSet zero_perturbation(const Network& net, Placement placement, NormSpec norm);
PerturbationSet zero_perturbation(const Network& net, Placement placement);

// Scaled l_p norm, robust to huge or tiny entries; p may be infinity.
double lp_norm(std::span<const double> v, double p);
double gnorm(const PerturbationSet& delta);

struct ForwardTrace {
  std::vector<std::vector<double>> hidden;  // h_0 .. h_k
  std::vector<double> layer_norms;          // s_(0) .. s_(r-1), s_(i) = ||h_2i||
  std::vector<double> logits;
  double gamma = 0.0;
  std::size_t predicted = 0;
  bool correct = false;
};

// gamma = max{0, F_y - max_{y' != y} F_y'}; binary: max{0, t F} with t = +-1.
double output_margin(std::span<const double> logits, std::size_t y);
std::size_t predicted_label(std::span<const double> logits);
// +-1 score sign for binary nets, one-hot otherwise.
Tensor target_encoding(const Network& net, std::size_t y);

ForwardTrace forward_trace(const Network& net, std::span<const double> x, std::size_t y);
ForwardTrace forward_perturb(const Network& net, std::span<const double> x, std::size_t y,
                             const PerturbationSet& delta, ScaleMode mode);

// kappa_{j<-i}(x): spectral norm of the Jacobian of layers i..j at the clean h_{i-1}.
// Requires 1 <= i <= j + 1 <= k + 1; j = i - 1 gives 1.
double interlayer_jacobian_norm(const Network& net, std::span<const double> x, std::size_t i,
                                std::size_t j);

// Dense Jacobian of layers i..j at the clean h_{i-1} (identity when j = i - 1).
Tensor interlayer_jacobian(const Network& net, std::span<const double> x, std::size_t i,
                           std::size_t j);

// All kappa_{j<-i}(x) at once; at(i, j) for 1 <= i <= j + 1 <= k + 1.
class KappaTable {
 public:
  KappaTable(const Network& net, std::span<const double> x);
  double at(std::size_t i, std::size_t j) const;
  std::size_t k() const noexcept { return k_; }

 private:
  std::size_t k_;
  std::vector<double> table_;  // (k + 2) x (k + 1)
};

enum class Head { logits, cross_entropy, margin_gap };

struct GraphOptions {
  std::optional<Placement> placement;  // absent: clean network
  ScaleMode scale = ScaleMode::pre_scale;
  Head head = Head::cross_entropy;
  bool dropout = false;  // multiplicative masks after each activation layer
};

// Differentiable view of an architecture. Leaves: W_(1..r), x, deltas, masks, target.
struct NetGraph {
  autodiff::Graph graph;
  GraphOptions options;
  std::vector<std::size_t> weight_leaf;
  std::size_t x_leaf = npos;
  std::vector<std::size_t> delta_leaf;  // per layer j - 1; npos when absent
  std::vector<std::size_t> mask_leaf;   // per activation layer i - 1; npos when absent
  std::size_t target_leaf = npos;

  std::vector<Tensor> inputs(const Network& net, std::span<const double> x, std::size_t y,
                             const PerturbationSet* delta = nullptr,
                             const std::vector<std::vector<double>>* masks = nullptr) const;
};

NetGraph build_graph(const Network& net, const GraphOptions& options);

nlohmann::json to_json(const Network& net);
Network network_from_json(const nlohmann::json& j);
void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace allmargin::network
