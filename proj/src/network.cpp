#include "allmargin/network.hpp"

#include <algorithm>
#include <fstream>

namespace allmargin::network {

using autodiff::GraphBuilder;
using autodiff::NodeId;

Network::Network(std::vector<std::size_t> widths, Activation activation, std::vector<Tensor> weights)
    : widths_(std::move(widths)), activation_(activation), weights_(std::move(weights)) {
  if (widths_.size() < 2) throw Error(ErrorCode::invalid_argument, "a network needs at least two widths");
  if (std::find(widths_.begin(), widths_.end(), std::size_t{0}) != widths_.end())
    throw Error(ErrorCode::invalid_argument, "layer widths must be positive");
  if (weights_.size() + 1 != widths_.size())
    throw Error(ErrorCode::shape_mismatch, "expected " + std::to_string(widths_.size() - 1) +
                                               " weight matrices, got " + std::to_string(weights_.size()));
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    const std::vector<std::size_t> want{widths_[i + 1], widths_[i]};
    if (weights_[i].shape() != want)
      throw Error(ErrorCode::shape_mismatch, "W_(" + std::to_string(i + 1) + ") has shape " +
                                                 autodiff::shape_string(weights_[i].shape()) +
                                                 ", expected " + autodiff::shape_string(want));
    if (!weights_[i].all_finite())
      throw Error(ErrorCode::invalid_argument, "W_(" + std::to_string(i + 1) + ") is not finite");
  }
}

std::size_t Network::max_width() const { return *std::max_element(widths_.begin(), widths_.end()); }

double Network::kappa_prime() const { return network::kappa_prime(activation_); }

bool Network::same_architecture(const Network& other) const {
  return widths_ == other.widths_ && activation_ == other.activation_;
}

Network init_network(const std::vector<std::size_t>& widths, Activation activation, std::uint64_t seed) {
  if (widths.size() < 2) throw Error(ErrorCode::invalid_argument, "a network needs at least two widths");
  Rng rng(seed);
  std::vector<Tensor> weights;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    if (widths[i] == 0 || widths[i + 1] == 0)
      throw Error(ErrorCode::invalid_argument, "layer widths must be positive");
    const double limit = std::sqrt(3.0 / static_cast<double>(widths[i]));
    std::vector<double> w(widths[i] * widths[i + 1]);
    for (double& v : w) v = rng.uniform(-limit, limit);
    weights.push_back(Tensor::matrix(widths[i + 1], widths[i], std::move(w)));
  }
  return Network(widths, activation, std::move(weights));
}

namespace {

double grid_max_second_derivative(Activation a) {
  constexpr int n = 1'000'000;
  double best = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = -20.0 + 40.0 * static_cast<double>(i) / (n - 1);
    best = std::max(best, std::abs(autodiff::activate_second_derivative(a, z)));
  }
  return best;
}

}  // namespace

double kappa_prime(Activation a) {
  switch (a) {
    case Activation::relu: return kInfinity;
    case Activation::identity: return 0.0;
    case Activation::tanh: {
      static const double v = grid_max_second_derivative(Activation::tanh);
      return v;
    }
    case Activation::softplus: {
      static const double v = grid_max_second_derivative(Activation::softplus);
      return v;
    }
  }
  return kInfinity;
}

std::string to_string(Placement p) {
  switch (p) {
    case Placement::all_layers: return "all-layers";
    case Placement::linear_only: return "linear-only";
    case Placement::post_block: return "post-block";
  }
  return "all-layers";
}

std::string to_string(ScaleMode m) { return m == ScaleMode::pre_scale ? "pre-scale" : "post-scale"; }

Placement placement_from_string(const std::string& s) {
  if (s == "all-layers") return Placement::all_layers;
  if (s == "linear-only") return Placement::linear_only;
  if (s == "post-block") return Placement::post_block;
  throw Error(ErrorCode::unknown_kind, "unknown placement '" + s + "'");
}

ScaleMode scale_mode_from_string(const std::string& s) {
  if (s == "pre-scale") return ScaleMode::pre_scale;
  if (s == "post-scale") return ScaleMode::post_scale;
  throw Error(ErrorCode::unknown_kind, "unknown scale mode '" + s + "'");
}

bool placement_allows(Placement p, std::size_t j, std::size_t k) {
  switch (p) {
    case Placement::all_layers: return true;
    case Placement::linear_only: return j % 2 == 1;
    case Placement::post_block: return j % 2 == 0 || j == k;
  }
  return false;
}

bool PerturbationSet::active(std::size_t j) const {
  return !deltas.at(j - 1).empty() && std::isfinite(norm.alpha.at(j - 1));
}

std::size_t PerturbationSet::dimension() const {
  std::size_t d = 0;
  for (std::size_t j = 1; j <= deltas.size(); ++j)
    if (active(j)) d += deltas[j - 1].size();
  return d;
}

PerturbationSet zero_perturbation(const Network& net, Placement placement, NormSpec norm) {
  const std::size_t k = net.k();
  if (norm.alpha.size() != k)
    throw Error(ErrorCode::shape_mismatch, "norm spec has " + std::to_string(norm.alpha.size()) +
                                               " weights for " + std::to_string(k) + " layers");
  if (!(norm.p >= 1.0)) throw Error(ErrorCode::invalid_argument, "norm exponent p must be >= 1");
  for (double a : norm.alpha)
    if (!(a >= 0.0)) throw Error(ErrorCode::invalid_argument, "alpha must be nonnegative");
  PerturbationSet d;
  d.placement = placement;
  d.norm = std::move(norm);
  d.deltas.resize(k);
  for (std::size_t j = 1; j <= k; ++j)
    if (placement_allows(placement, j, k)) d.deltas[j - 1].assign(net.layer_width(j), 0.0);
  return d;
}

PerturbationSet zero_perturbation(const Network& net, Placement placement) {
  return zero_perturbation(net, placement, NormSpec::uniform(net.k()));
}

double lp_norm(std::span<const double> v, double p) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  if (m == 0.0 || std::isinf(p) || std::isinf(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::pow(std::abs(x) / m, p);
  return m * std::pow(s, 1.0 / p);
}

double gnorm(const PerturbationSet& delta) {
  std::vector<double> parts;
  parts.reserve(delta.deltas.size());
  for (std::size_t j = 0; j < delta.deltas.size(); ++j) {
    const double n = norm2(delta.deltas[j]);
    const double a = delta.norm.alpha.at(j);
    if (n == 0.0) {
      parts.push_back(0.0);
    } else {
      parts.push_back(std::isinf(a) ? kInfinity : a * n);
    }
  }
  return lp_norm(parts, delta.norm.p);
}

double output_margin(std::span<const double> logits, std::size_t y) {
  if (logits.size() == 1) {
    const double t = y == 1 ? 1.0 : -1.0;
    return std::max(0.0, t * logits[0]);
  }
  if (y >= logits.size()) throw Error(ErrorCode::index_out_of_range, "label " + std::to_string(y));
  double rival = -kInfinity;
  for (std::size_t j = 0; j < logits.size(); ++j)
    if (j != y) rival = std::max(rival, logits[j]);
  return std::max(0.0, logits[y] - rival);
}

std::size_t predicted_label(std::span<const double> logits) {
  if (logits.size() == 1) return logits[0] > 0.0 ? 1 : 0;
  return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

Tensor target_encoding(const Network& net, std::size_t y) {
  if (y >= net.class_count()) throw Error(ErrorCode::index_out_of_range, "label " + std::to_string(y));
  if (net.binary()) return Tensor::scalar(y == 1 ? 1.0 : -1.0);
  Tensor t = Tensor::zeros({net.output_dim()});
  t[y] = 1.0;
  return t;
}

namespace {

void check_input(const Network& net, std::span<const double> x, std::size_t y) {
  if (x.size() != net.input_dim())
    throw Error(ErrorCode::shape_mismatch, "input has " + std::to_string(x.size()) +
                                               " entries, network expects " + std::to_string(net.input_dim()));
  if (y >= net.class_count()) throw Error(ErrorCode::index_out_of_range, "label " + std::to_string(y));
}

void check_perturbation(const Network& net, const PerturbationSet& delta) {
  const std::size_t k = net.k();
  if (delta.deltas.size() != k || delta.norm.alpha.size() != k)
    throw Error(ErrorCode::shape_mismatch, "perturbation set does not have one entry per layer");
  for (std::size_t j = 1; j <= k; ++j) {
    const auto& d = delta.deltas[j - 1];
    if (d.empty()) continue;
    if (!placement_allows(delta.placement, j, k))
      throw Error(ErrorCode::shape_mismatch, "layer " + std::to_string(j) + " is not perturbed under " +
                                                 to_string(delta.placement));
    if (d.size() != net.layer_width(j))
      throw Error(ErrorCode::shape_mismatch, "delta_" + std::to_string(j) + " has " + std::to_string(d.size()) +
                                                 " entries, layer width is " + std::to_string(net.layer_width(j)));
  }
}

void apply_layer(const Network& net, std::size_t j, const std::vector<double>& in, std::vector<double>& out) {
  if (j % 2 == 1) {
    const Tensor& w = net.weight((j + 1) / 2);
    const std::size_t rows = w.rows(), cols = w.cols();
    out.assign(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      const double* row = w.data().data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) s += row[c] * in[c];
      out[r] = s;
    }
  } else {
    out.resize(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = autodiff::activate(net.activation(), in[i]);
  }
}

ForwardTrace run(const Network& net, std::span<const double> x, std::size_t y, const PerturbationSet* delta,
                 ScaleMode mode) {
  check_input(net, x, y);
  const std::size_t k = net.k();
  ForwardTrace t;
  t.hidden.resize(k + 1);
  t.hidden[0].assign(x.begin(), x.end());
  for (std::size_t j = 1; j <= k; ++j) {
    apply_layer(net, j, t.hidden[j - 1], t.hidden[j]);
    if (delta && !delta->deltas[j - 1].empty()) {
      const auto& d = delta->deltas[j - 1];
      const double scale = mode == ScaleMode::pre_scale ? norm2(t.hidden[j - 1]) : norm2(t.hidden[j]);
      for (std::size_t i = 0; i < d.size(); ++i) t.hidden[j][i] += d[i] * scale;
    }
  }
  for (std::size_t i = 0; i < net.r(); ++i) t.layer_norms.push_back(norm2(t.hidden[2 * i]));
  t.logits = t.hidden[k];
  t.gamma = output_margin(t.logits, y);
  t.predicted = predicted_label(t.logits);
  t.correct = t.gamma > 0.0;
  return t;
}

}  // namespace

ForwardTrace forward_trace(const Network& net, std::span<const double> x, std::size_t y) {
  return run(net, x, y, nullptr, ScaleMode::pre_scale);
}

ForwardTrace forward_perturb(const Network& net, std::span<const double> x, std::size_t y,
                             const PerturbationSet& delta, ScaleMode mode) {
  check_perturbation(net, delta);
  return run(net, x, y, &delta, mode);
}

namespace {

// J <- (layer l Jacobian at h_{l-1}) * J
void extend_jacobian(const Network& net, std::size_t l, const std::vector<double>& h_prev, Tensor& jac) {
  const std::size_t cols = jac.cols();
  if (l % 2 == 1) {
    const Tensor& w = net.weight((l + 1) / 2);
    Tensor next = Tensor::zeros({w.rows(), cols});
    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t m = 0; m < w.cols(); ++m) {
        const double wv = w.at(r, m);
        if (wv == 0.0) continue;
        for (std::size_t c = 0; c < cols; ++c) next.at(r, c) += wv * jac.at(m, c);
      }
    jac = std::move(next);
  } else {
    for (std::size_t r = 0; r < jac.rows(); ++r) {
      const double d = autodiff::activate_derivative(net.activation(), h_prev[r]);
      for (std::size_t c = 0; c < cols; ++c) jac.at(r, c) *= d;
    }
  }
}

Tensor identity(std::size_t n) {
  Tensor t = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

void check_range(const Network& net, std::size_t i, std::size_t j) {
  if (i < 1 || i > j + 1 || j > net.k())
    throw Error(ErrorCode::index_out_of_range, "kappa_{" + std::to_string(j) + "<-" + std::to_string(i) +
                                                   "} needs 1 <= i <= j+1 <= k+1 with k = " +
                                                   std::to_string(net.k()));
}

}  // namespace

Tensor interlayer_jacobian(const Network& net, std::span<const double> x, std::size_t i, std::size_t j) {
  check_range(net, i, j);
  const ForwardTrace t = forward_trace(net, x, 0);
  Tensor jac = identity(net.layer_width(i - 1));
  for (std::size_t l = i; l <= j; ++l) extend_jacobian(net, l, t.hidden[l - 1], jac);
  return jac;
}

double interlayer_jacobian_norm(const Network& net, std::span<const double> x, std::size_t i, std::size_t j) {
  check_range(net, i, j);
  if (j + 1 == i) return 1.0;
  return autodiff::spectral_norm(interlayer_jacobian(net, x, i, j));
}

KappaTable::KappaTable(const Network& net, std::span<const double> x) : k_(net.k()) {
  table_.assign((k_ + 2) * (k_ + 1), 0.0);
  const ForwardTrace t = forward_trace(net, x, 0);
  for (std::size_t i = 1; i <= k_ + 1; ++i) {
    table_[i * (k_ + 1) + (i - 1)] = 1.0;
    Tensor jac = identity(net.layer_width(i - 1));
    for (std::size_t j = i; j <= k_; ++j) {
      extend_jacobian(net, j, t.hidden[j - 1], jac);
      table_[i * (k_ + 1) + j] = autodiff::spectral_norm(jac);
    }
  }
}

double KappaTable::at(std::size_t i, std::size_t j) const {
  if (i < 1 || i > j + 1 || j > k_)
    throw Error(ErrorCode::index_out_of_range, "kappa_{" + std::to_string(j) + "<-" + std::to_string(i) + "}");
  return table_[i * (k_ + 1) + j];
}

NetGraph build_graph(const Network& net, const GraphOptions& options) {
  const std::size_t r = net.r(), k = net.k();
  NetGraph ng;
  ng.options = options;
  GraphBuilder b;
  std::size_t leaves = 0;
  std::vector<NodeId> w(r);
  for (std::size_t i = 1; i <= r; ++i) {
    w[i - 1] = b.input("W_(" + std::to_string(i) + ")", net.weight(i).shape());
    ng.weight_leaf.push_back(leaves++);
  }
  NodeId h = b.input("x", {net.input_dim()});
  ng.x_leaf = leaves++;

  std::vector<NodeId> deltas(k, 0);
  ng.delta_leaf.assign(k, npos);
  if (options.placement) {
    for (std::size_t j = 1; j <= k; ++j) {
      if (!placement_allows(*options.placement, j, k)) continue;
      deltas[j - 1] = b.input("delta_" + std::to_string(j), {net.layer_width(j)});
      ng.delta_leaf[j - 1] = leaves++;
    }
  }
  std::vector<NodeId> masks(r > 0 ? r - 1 : 0, 0);
  ng.mask_leaf.assign(masks.size(), npos);
  if (options.dropout) {
    for (std::size_t i = 1; i < r; ++i) {
      masks[i - 1] = b.input("mask_" + std::to_string(i), {net.widths()[i]});
      ng.mask_leaf[i - 1] = leaves++;
    }
  }
  NodeId target = 0;
  if (options.head != Head::logits) {
    target = b.input("target", {net.output_dim()});
    ng.target_leaf = leaves++;
  }

  for (std::size_t j = 1; j <= k; ++j) {
    const NodeId prev = h;
    h = j % 2 == 1 ? b.matvec(w[(j + 1) / 2 - 1], prev) : b.activation(net.activation(), prev);
    if (ng.delta_leaf[j - 1] != npos) {
      const NodeId scale = b.norm2(options.scale == ScaleMode::pre_scale ? prev : h);
      h = b.add(h, b.scalar_mul(deltas[j - 1], scale));
    }
    if (j % 2 == 0 && ng.mask_leaf[j / 2 - 1] != npos) h = b.hadamard(h, masks[j / 2 - 1]);
  }
  switch (options.head) {
    case Head::logits: ng.graph = b.build(h); break;
    case Head::cross_entropy: ng.graph = b.build(b.softmax_xent(h, target)); break;
    case Head::margin_gap: ng.graph = b.build(b.margin_gap(h, target)); break;
  }
  return ng;
}

std::vector<Tensor> NetGraph::inputs(const Network& net, std::span<const double> x, std::size_t y,
                                     const PerturbationSet* delta,
                                     const std::vector<std::vector<double>>* masks) const {
  check_input(net, x, y);
  std::vector<Tensor> in;
  in.reserve(graph.leaves().size());
  for (const Tensor& w : net.weights()) in.push_back(w);
  in.push_back(Tensor::vector(std::vector<double>(x.begin(), x.end())));
  if (delta) {
    check_perturbation(net, *delta);
    if (!options.placement || delta->placement != *options.placement)
      throw Error(ErrorCode::shape_mismatch, "perturbation placement does not match the graph");
  }
  for (std::size_t j = 0; j < delta_leaf.size(); ++j) {
    if (delta_leaf[j] == npos) continue;
    in.push_back(delta ? Tensor::vector(delta->deltas[j]) : Tensor::zeros({net.layer_width(j + 1)}));
  }
  for (std::size_t i = 0; i < mask_leaf.size(); ++i) {
    if (mask_leaf[i] == npos) continue;
    if (masks) {
      in.push_back(Tensor::vector(masks->at(i)));
    } else {
      in.push_back(Tensor::vector(std::vector<double>(net.widths()[i + 1], 1.0)));
    }
  }
  if (target_leaf != npos) in.push_back(target_encoding(net, y));
  return in;
}

nlohmann::json to_json(const Network& net) {
  nlohmann::json j;
  j["format_version"] = kFormatVersion;
  j["widths"] = net.widths();
  j["activation"] = autodiff::to_string(net.activation());
  nlohmann::json ws = nlohmann::json::array();
  for (const Tensor& w : net.weights()) ws.push_back(w.data());
  j["weights"] = ws;
  return j;
}

Network network_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kFormatVersion)
      throw Error(ErrorCode::malformed_input, "unsupported network format_version");
    auto widths = j.at("widths").get<std::vector<std::size_t>>();
    const Activation act = autodiff::activation_from_string(j.at("activation").get<std::string>());
    const auto& ws = j.at("weights");
    if (!ws.is_array() || ws.size() + 1 != widths.size())
      throw Error(ErrorCode::malformed_input, "weights must hold one array per layer");
    std::vector<Tensor> weights;
    for (std::size_t i = 0; i < ws.size(); ++i)
      weights.push_back(Tensor::matrix(widths[i + 1], widths[i], ws[i].get<std::vector<double>>()));
    return Network(std::move(widths), act, std::move(weights));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_input, std::string("network json: ") + e.what());
  }
}

void save_network(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << to_json(net).dump(1) << '\n';
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot read " + path.string());
  try {
    return network_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::malformed_input, e.what());
  }
}

}  // namespace allmargin::network
