#include "allmargin/margin.hpp"

#include <algorithm>
#include <cmath>

namespace allmargin::margin {

using autodiff::Tensor;
using network::NetGraph;

std::string to_string(MarginKind k) {
  switch (k) {
    case MarginKind::exact_linear: return "exact-linear";
    case MarginKind::pga_upper_estimate: return "pga-upper-estimate";
    case MarginKind::brute_force: return "brute-force";
    case MarginKind::analytic_lower_bound: return "analytic-lower-bound";
    case MarginKind::unbounded_at_budget: return "margin-unbounded-at-budget";
  }
  return "unknown";
}

NormSpec MarginProblem::norm_for(const Network& net) const {
  NormSpec n = norm ? *norm : NormSpec::uniform(net.k());
  if (n.alpha.size() != net.k())
    throw Error(ErrorCode::shape_mismatch, "norm spec has " + std::to_string(n.alpha.size()) + " weights for " +
                                               std::to_string(net.k()) + " layers");
  if (!(n.p >= 1.0)) throw Error(ErrorCode::invalid_argument, "norm exponent p must be >= 1");
  for (double a : n.alpha)
    if (!(a > 0.0)) throw Error(ErrorCode::invalid_argument, "margin weights alpha must be > 0");
  return n;
}

void SolverConfig::validate() const {
  if (ascent_steps < 1 || restarts < 1 || max_bisections < 1 || refine_iterations < 0)
    throw Error(ErrorCode::invalid_config, "solver step counts must be positive");
  if (!(ascent_rate > 0.0) || !(ascent_growth >= 1.0))
    throw Error(ErrorCode::invalid_config, "ascent rate must be > 0 and growth >= 1");
  if (!(bisection_tolerance > 0.0)) throw Error(ErrorCode::invalid_config, "bisection tolerance must be > 0");
}

namespace {

using Blocks = std::vector<std::vector<double>>;

// Unit-norm steepest direction for a blockwise gradient under ||(||u_j||)_j||_p.
// Returns false when the gradient vanishes. `dual` receives the dual norm.
bool steepest(const Blocks& g, double p, Blocks& dir, double& dual) {
  const std::size_t L = g.size();
  std::vector<double> n(L);
  double nmax = 0.0;
  for (std::size_t j = 0; j < L; ++j) {
    n[j] = norm2(g[j]);
    nmax = std::max(nmax, n[j]);
  }
  dir.assign(L, {});
  if (!(nmax > 0.0) || !std::isfinite(nmax)) return false;
  std::vector<double> t(L, 0.0);
  if (p == 1.0) {
    const std::size_t j = static_cast<std::size_t>(std::max_element(n.begin(), n.end()) - n.begin());
    t[j] = 1.0;
    dual = nmax;
  } else if (std::isinf(p)) {
    for (std::size_t j = 0; j < L; ++j) t[j] = n[j] > 0.0 ? 1.0 : 0.0;
    dual = 0.0;
    for (double v : n) dual += v;
  } else {
    const double q = p / (p - 1.0);
    for (std::size_t j = 0; j < L; ++j) t[j] = std::pow(n[j] / nmax, q - 1.0);
    const double tn = network::lp_norm(t, p);
    for (double& v : t) v /= tn;
    dual = network::lp_norm(n, q);
  }
  for (std::size_t j = 0; j < L; ++j) {
    dir[j].assign(g[j].size(), 0.0);
    if (t[j] == 0.0) continue;
    for (std::size_t c = 0; c < g[j].size(); ++c) dir[j][c] = t[j] * g[j][c] / n[j];
  }
  return true;
}

// Solver state for one (net, x, y, problem). Works in normalized coordinates
// u_j = abar_j delta_j with abar = alpha / max(alpha), so a global rescaling of
// alpha leaves every iterate unchanged.
class Searcher {
 public:
  Searcher(const Network& net, std::span<const double> x, std::size_t y, const MarginProblem& problem)
      : net_(net), x_(x.begin(), x.end()), y_(y), problem_(problem), norm_(problem.norm_for(net)) {
    double amax = 0.0;
    for (std::size_t j = 1; j <= net.k(); ++j) {
      if (!network::placement_allows(problem.placement, j, net.k()) || std::isinf(norm_.alpha[j - 1])) continue;
      layers_.push_back(j);
      amax = std::max(amax, norm_.alpha[j - 1]);
    }
    for (std::size_t j : layers_) abar_.push_back(norm_.alpha[j - 1] / amax);
    xent_ = network::build_graph(net, {problem.placement, problem.scale, network::Head::cross_entropy, false});
    gap_ = network::build_graph(net, {problem.placement, problem.scale, network::Head::margin_gap, false});
  }

  bool has_free_layers() const { return !layers_.empty(); }

  Blocks zero() const {
    Blocks u;
    for (std::size_t j : layers_) u.emplace_back(net_.layer_width(j), 0.0);
    return u;
  }

  PerturbationSet to_delta(const Blocks& u) const {
    PerturbationSet d = network::zero_perturbation(net_, problem_.placement, norm_);
    for (std::size_t b = 0; b < layers_.size(); ++b)
      for (std::size_t c = 0; c < u[b].size(); ++c) d.deltas[layers_[b] - 1][c] = u[b][c] / abar_[b];
    return d;
  }

  double norm(const Blocks& u) const {
    std::vector<double> n;
    for (const auto& v : u) n.push_back(norm2(v));
    return network::lp_norm(n, norm_.p);
  }

  bool misclassified(const Blocks& u) {
    ++evaluations_;
    return !network::forward_perturb(net_, x_, y_, to_delta(u), problem_.scale).correct;
  }

  // Gradient in u-space of the chosen head, plus the head value.
  Blocks gradient(const NetGraph& g, const Blocks& u, double& value) {
    ++evaluations_;
    const PerturbationSet d = to_delta(u);
    const auto in = g.inputs(net_, x_, y_, &d);
    const auto eval = autodiff::forward(g.graph, in);
    value = eval.output(g.graph)[0];
    const auto grads = autodiff::backward(g.graph, eval, Tensor::scalar(1.0));
    Blocks out;
    for (std::size_t b = 0; b < layers_.size(); ++b) {
      const Tensor& gd = grads[g.delta_leaf[layers_[b] - 1]];
      std::vector<double> v(gd.values().begin(), gd.values().end());
      for (double& e : v) e /= abar_[b];
      out.push_back(std::move(v));
    }
    return out;
  }

  const NetGraph& xent() const { return xent_; }
  const NetGraph& gap() const { return gap_; }
  double p() const { return norm_.p; }
  int evaluations() const { return evaluations_; }

  static Blocks scaled(const Blocks& u, double t) {
    Blocks v = u;
    for (auto& b : v)
      for (double& e : b) e *= t;
    return v;
  }

  static void axpy(Blocks& u, double a, const Blocks& d) {
    for (std::size_t b = 0; b < u.size(); ++b)
      for (std::size_t c = 0; c < u[b].size(); ++c) u[b][c] += a * d[b][c];
  }

  // Smallest misclassifying point on the ray t*d with t in (0, t_max]:
  // a uniform scan locates the first crossing, bisection refines it.
  std::optional<Blocks> ray_boundary(const Blocks& d, double t_max, int scan, const SolverConfig& cfg) {
    double lo = 0.0, hi = -1.0;
    for (int i = 1; i <= scan; ++i) {
      const double t = t_max * i / scan;
      if (misclassified(scaled(d, t))) {
        hi = t;
        lo = t_max * (i - 1) / scan;
        break;
      }
    }
    if (hi < 0.0) return std::nullopt;
    for (int it = 0; it < cfg.max_bisections && hi - lo > cfg.bisection_tolerance * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (misclassified(scaled(d, mid))) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    return scaled(d, hi);
  }

 private:
  const Network& net_;
  std::vector<double> x_;
  std::size_t y_;
  MarginProblem problem_;
  NormSpec norm_;
  std::vector<std::size_t> layers_;
  std::vector<double> abar_;
  NetGraph xent_, gap_;
  int evaluations_ = 0;
};

MarginResult zero_margin(const Network& net, const MarginProblem& problem, MarginKind kind, double gamma) {
  MarginResult r;
  r.value = 0.0;
  r.kind = kind;
  r.gamma = gamma;
  r.feasible_delta = network::zero_perturbation(net, problem.placement, problem.norm_for(net));
  return r;
}

// Linearized min-norm steps from the current boundary point (DeepFool-style).
void refine(Searcher& s, Blocks& best, double& best_norm, const SolverConfig& cfg) {
  for (int it = 0; it < cfg.refine_iterations; ++it) {
    double gap_value = 0.0;
    const Blocks g = s.gradient(s.gap(), best, gap_value);
    Blocks dir;
    double dual = 0.0;
    if (!steepest(g, s.p(), dir, dual)) return;
    double gu = 0.0;
    for (std::size_t b = 0; b < g.size(); ++b)
      for (std::size_t c = 0; c < g[b].size(); ++c) gu += g[b][c] * best[b][c];
    const double c = gu - gap_value;  // linearized gap: gap(0) ~ -c
    if (!(c < 0.0)) return;
    const Blocks target = Searcher::scaled(dir, c / dual);
    bool improved = false;
    for (double lambda : {1.0, 0.5, 0.25}) {
      Blocks d = Searcher::scaled(best, 1.0 - lambda);
      Searcher::axpy(d, lambda, target);
      const double nd = s.norm(d);
      if (!(nd > 0.0)) continue;
      auto hit = s.ray_boundary(d, best_norm / nd, 16, cfg);
      if (!hit) continue;
      const double nh = s.norm(*hit);
      if (nh < best_norm * (1.0 - 1e-12)) {
        const bool small_gain = nh > best_norm * (1.0 - 0.1 * cfg.bisection_tolerance);
        best = std::move(*hit);
        best_norm = nh;
        improved = !small_gain;
        break;
      }
    }
    if (!improved) return;
  }
}

}  // namespace

MarginResult estimate_margin(const Network& net, std::span<const double> x, std::size_t y,
                             const MarginProblem& problem, const SolverConfig& cfg) {
  cfg.validate();
  const auto clean = network::forward_trace(net, x, y);
  if (!clean.correct) return zero_margin(net, problem, MarginKind::pga_upper_estimate, clean.gamma);

  Searcher s(net, x, y, problem);
  MarginResult result;
  result.gamma = clean.gamma;
  if (!s.has_free_layers()) {
    result.kind = MarginKind::unbounded_at_budget;
    result.value = kInfinity;
    return result;
  }

  std::optional<Blocks> best;
  double best_norm = kInfinity;
  double largest = 0.0;
  for (int restart = 0; restart < cfg.restarts; ++restart) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(restart)));
    Blocks u = s.zero();
    if (restart > 0) {
      for (auto& b : u)
        for (double& e : b) e = rng.normal();
      u = Searcher::scaled(u, cfg.ascent_rate / s.norm(u));
    }
    std::optional<Blocks> found;
    double step = cfg.ascent_rate;
    for (int it = 0; it < cfg.ascent_steps; ++it) {
      if (s.misclassified(u)) {
        found = u;
        break;
      }
      double loss = 0.0;
      const Blocks g = s.gradient(s.xent(), u, loss);
      Blocks dir;
      double dual = 0.0;
      if (!steepest(g, s.p(), dir, dual)) {
        dir = s.zero();
        for (auto& b : dir)
          for (double& e : b) e = rng.normal();
        dir = Searcher::scaled(dir, 1.0 / s.norm(dir));
      }
      Searcher::axpy(u, step, dir);
      step *= cfg.ascent_growth;
      largest = std::max(largest, s.norm(u));
    }
    if (!found && s.misclassified(u)) found = u;
    if (!found) continue;

    auto boundary = s.ray_boundary(*found, 1.0, 32, cfg);
    Blocks point = boundary ? *boundary : *found;
    double point_norm = s.norm(point);
    refine(s, point, point_norm, cfg);
    if (point_norm < best_norm) {
      best = std::move(point);
      best_norm = point_norm;
    }
  }

  result.iterations = s.evaluations();
  if (!best) {
    result.kind = MarginKind::unbounded_at_budget;
    result.value = kInfinity;
    result.largest_norm_tried = largest;
    return result;
  }
  result.kind = MarginKind::pga_upper_estimate;
  result.feasible_delta = s.to_delta(*best);
  result.value = network::gnorm(*result.feasible_delta);
  return result;
}

MarginResult exact_linear_margin(const Network& net, std::span<const double> x, std::size_t y,
                                 const MarginProblem& problem) {
  if (net.r() != 1) throw Error(ErrorCode::architecture_mismatch, "exact linear margin needs a single-layer net");
  const NormSpec norm = problem.norm_for(net);
  const auto clean = network::forward_trace(net, x, y);
  if (!clean.correct) return zero_margin(net, problem, MarginKind::exact_linear, clean.gamma);

  MarginResult r;
  r.kind = MarginKind::exact_linear;
  r.gamma = clean.gamma;
  const double alpha = norm.alpha[0];
  const double s = problem.scale == ScaleMode::pre_scale ? norm2(x) : norm2(clean.logits);
  if (s == 0.0 || std::isinf(alpha)) {
    r.kind = MarginKind::unbounded_at_budget;
    r.value = kInfinity;
    return r;
  }
  const auto& f = clean.logits;
  PerturbationSet d = network::zero_perturbation(net, problem.placement, norm);
  auto& delta = d.deltas[0];
  if (net.binary()) {
    const double t = y == 1 ? 1.0 : -1.0;
    r.value = t * f[0] / (alpha * s);
    delta[0] = -f[0] / s;
  } else {
    std::size_t rival = 0;
    double best = kInfinity;
    for (std::size_t j = 0; j < f.size(); ++j) {
      if (j == y) continue;
      const double v = (f[y] - f[j]) / (std::sqrt(2.0) * s * alpha);
      if (v < best) {
        best = v;
        rival = j;
      }
    }
    r.value = best;
    const double half = (f[y] - f[rival]) / (2.0 * s);
    delta[y] = -half;
    delta[rival] = half;
  }
  // the closed-form point sits on the boundary; nudge it across by a few ulps
  for (int i = 0; i < 64 && network::forward_perturb(net, x, y, d, problem.scale).correct; ++i)
    for (double& v : delta) v = std::nextafter(v, v > 0 ? kInfinity : -kInfinity);
  r.feasible_delta = std::move(d);
  return r;
}

namespace {

// Independent evaluator for the oracle: recomputes the perturbed pass from the
// weights without going through the network module's forward code.
class DirectEvaluator {
 public:
  DirectEvaluator(const Network& net, std::span<const double> x, std::size_t y, ScaleMode scale)
      : net_(net), x_(x.begin(), x.end()), y_(y), scale_(scale) {}

  // delta per layer (empty = none); returns true when gamma <= 0.
  bool misclassified(const std::vector<std::vector<double>>& delta) {
    h_ = x_;
    for (std::size_t j = 1; j <= net_.k(); ++j) {
      if (j % 2 == 1) {
        const Tensor& w = net_.weights()[(j - 1) / 2];
        z_.assign(w.rows(), 0.0);
        for (std::size_t r = 0; r < w.rows(); ++r)
          for (std::size_t c = 0; c < w.cols(); ++c) z_[r] += w.at(r, c) * h_[c];
      } else {
        z_.resize(h_.size());
        for (std::size_t i = 0; i < h_.size(); ++i) z_[i] = autodiff::activate(net_.activation(), h_[i]);
      }
      const auto& d = delta[j - 1];
      if (!d.empty()) {
        double ss = 0.0;
        for (double v : (scale_ == ScaleMode::pre_scale ? h_ : z_)) ss += v * v;
        const double sc = std::sqrt(ss);
        for (std::size_t i = 0; i < d.size(); ++i) z_[i] += d[i] * sc;
      }
      std::swap(h_, z_);
    }
    if (h_.size() == 1) return (y_ == 1 ? h_[0] : -h_[0]) <= 0.0;
    for (std::size_t j = 0; j < h_.size(); ++j)
      if (j != y_ && h_[j] >= h_[y_]) return true;
    return false;
  }

 private:
  const Network& net_;
  std::vector<double> x_, h_, z_;
  std::size_t y_;
  ScaleMode scale_;
};

}  // namespace

MarginResult brute_force_margin(const Network& net, std::span<const double> x, std::size_t y,
                                const MarginProblem& problem, const GridSpec& grid) {
  if (!(grid.radius > 0.0) || !(grid.resolution > 0.0))
    throw Error(ErrorCode::invalid_argument, "grid radius and resolution must be > 0");
  const NormSpec norm = problem.norm_for(net);
  const std::size_t k = net.k();
  struct Coord {
    std::size_t layer, index;
  };
  std::vector<Coord> coords;
  std::vector<std::size_t> free_layers;
  for (std::size_t j = 1; j <= k; ++j) {
    if (!network::placement_allows(problem.placement, j, k) || std::isinf(norm.alpha[j - 1])) continue;
    free_layers.push_back(j);
    for (std::size_t c = 0; c < net.layer_width(j); ++c) coords.push_back({j, c});
  }
  const std::size_t D = coords.size();
  if (D > grid.max_dimension)
    throw Error(ErrorCode::dimension_too_large, "perturbation dimension " + std::to_string(D) +
                                                    " exceeds the brute-force limit " +
                                                    std::to_string(grid.max_dimension));

  DirectEvaluator eval(net, x, y, problem.scale);
  std::vector<std::vector<double>> delta(k);
  for (std::size_t j = 1; j <= k; ++j)
    if (network::placement_allows(problem.placement, j, k)) delta[j - 1].assign(net.layer_width(j), 0.0);

  MarginResult r;
  r.kind = MarginKind::brute_force;
  r.gamma = network::forward_trace(net, x, y).gamma;
  if (eval.misclassified(delta)) return zero_margin(net, problem, MarginKind::brute_force, r.gamma);
  if (D == 0) {
    r.kind = MarginKind::unbounded_at_budget;
    r.value = kInfinity;
    return r;
  }

  auto weighted_norm = [&](const std::vector<double>& point) {
    std::vector<double> per_layer(free_layers.size(), 0.0);
    std::size_t b = 0;
    for (std::size_t i = 0; i < D; ++i) {
      while (free_layers[b] != coords[i].layer) ++b;
      per_layer[b] += point[i] * point[i];
    }
    for (std::size_t l = 0; l < free_layers.size(); ++l)
      per_layer[l] = norm.alpha[free_layers[l] - 1] * std::sqrt(per_layer[l]);
    return network::lp_norm(per_layer, norm.p);
  };

  std::vector<double> best_point;
  double best = kInfinity;
  long evaluations = 0;
  // Scans center + spacing * i for i in [-half, half]^D.
  auto scan = [&](const std::vector<double>& center, double spacing, long half) {
    std::vector<long> idx(D, -half);
    std::vector<double> point(D);
    while (true) {
      for (std::size_t i = 0; i < D; ++i) point[i] = center[i] + spacing * static_cast<double>(idx[i]);
      const double n = weighted_norm(point);
      if (n < best) {
        for (std::size_t i = 0; i < D; ++i) delta[coords[i].layer - 1][coords[i].index] = point[i];
        ++evaluations;
        if (eval.misclassified(delta)) {
          best = n;
          best_point = point;
        }
      }
      std::size_t d = 0;
      while (d < D && ++idx[d] > half) idx[d++] = -half;
      if (d == D) break;
    }
  };

  double amin = kInfinity, amax = 0.0;
  for (std::size_t j : free_layers) {
    amin = std::min(amin, norm.alpha[j - 1]);
    amax = std::max(amax, norm.alpha[j - 1]);
  }
  // probe: a coarse pass over the full radius yields an upper bound U
  const long probe = std::max<long>(1, grid.probe_cells);
  scan(std::vector<double>(D, 0.0), grid.radius / static_cast<double>(probe), probe);
  if (best_point.empty()) {
    r.kind = MarginKind::unbounded_at_budget;
    r.value = kInfinity;
    r.largest_norm_tried = weighted_norm(std::vector<double>(D, grid.radius));
    r.iterations = static_cast<int>(std::min<long>(evaluations, INT32_MAX));
    return r;
  }
  // main pass: every coordinate of a better point lies in [-U / alpha_min, U / alpha_min];
  // repeated while the bound keeps halving so the grid stays fine relative to U
  double spacing = grid.resolution;
  for (int pass = 0; pass < 8; ++pass) {
    const double bound = best;
    const double box = bound / amin;
    spacing = std::min(grid.resolution, box / static_cast<double>(std::max<long>(1, grid.relative_cells)));
    scan(std::vector<double>(D, 0.0), spacing, static_cast<long>(std::ceil(box / spacing - 1e-9)));
    if (!(best < 0.5 * bound)) break;
  }
  const double main_spacing = spacing;
  for (int level = 0; level < 2; ++level) {
    spacing *= 0.5;
    scan(std::vector<double>(best_point), spacing, 4);
  }

  PerturbationSet d = network::zero_perturbation(net, problem.placement, norm);
  for (std::size_t i = 0; i < D; ++i) d.deltas[coords[i].layer - 1][coords[i].index] = best_point[i];
  const double blocks = static_cast<double>(free_layers.size());
  r.value = network::gnorm(d);
  r.feasible_delta = std::move(d);
  r.iterations = static_cast<int>(std::min<long>(evaluations, INT32_MAX));
  // any point of a main-pass cell is within spacing * sqrt(D) of a grid point
  r.slack = main_spacing * std::sqrt(static_cast<double>(D)) * amax *
            std::pow(blocks, std::max(0.0, 1.0 / norm.p - 0.5));
  return r;
}

LipschitzGapReport margin_lipschitz_gap(const Network& a, const Network& b, std::span<const std::vector<double>> xs,
                                        std::span<const std::size_t> ys, const MarginProblem& problem,
                                        const GridSpec& grid) {
  if (!a.same_architecture(b)) throw Error(ErrorCode::architecture_mismatch, "networks differ in architecture");
  if (xs.size() != ys.size()) throw Error(ErrorCode::count_mismatch, "inputs and labels differ in length");
  const NormSpec norm = problem.norm_for(a);
  LipschitzGapReport rep;
  rep.exact = a.r() == 1;

  std::vector<double> weighted;
  for (std::size_t j = 1; j <= a.k(); ++j) {
    double g = 0.0;
    if (j % 2 == 1) {
      Tensor diff = a.weights()[(j - 1) / 2];
      const Tensor& wb = b.weights()[(j - 1) / 2];
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= wb[i];
      g = autodiff::spectral_norm(diff);
    }
    rep.layer_gaps.push_back(g);
    if (g == 0.0) {
      weighted.push_back(0.0);
    } else if (!network::placement_allows(problem.placement, j, a.k()) || std::isinf(norm.alpha[j - 1])) {
      weighted.push_back(kInfinity);
    } else {
      weighted.push_back(norm.alpha[j - 1] * g);
    }
  }
  rep.rhs = network::lp_norm(weighted, norm.p);

  for (std::size_t i = 0; i < xs.size(); ++i) {
    MarginResult ma = rep.exact ? exact_linear_margin(a, xs[i], ys[i], problem)
                                : brute_force_margin(a, xs[i], ys[i], problem, grid);
    MarginResult mb = rep.exact ? exact_linear_margin(b, xs[i], ys[i], problem)
                                : brute_force_margin(b, xs[i], ys[i], problem, grid);
    rep.slack = std::max({rep.slack, ma.slack, mb.slack});
    rep.margin_a.push_back(ma.value);
    rep.margin_b.push_back(mb.value);
    const bool bounded = std::isfinite(ma.value) && std::isfinite(mb.value);
    rep.gap.push_back(bounded ? std::abs(ma.value - mb.value) : std::nan(""));
  }
  const double tol = rep.exact ? 1e-9 : 0.0;
  for (double g : rep.gap)
    if (!(g <= rep.rhs + 2.0 * rep.slack + tol)) ++rep.violations;
  return rep;
}

MarginResult adversarial_margin(const Network& net, std::span<const double> x, std::size_t y, const AttackSpec& ball,
                                const MarginProblem& problem, const SolverConfig& cfg) {
  ball.validate(x.size());
  MarginResult best = estimate_margin(net, x, y, problem, cfg);
  best.input.assign(x.begin(), x.end());
  if (best.value == 0.0 || ball.radius == 0.0) return best;

  SolverConfig quick = cfg;
  quick.restarts = 1;
  const NetGraph gap = network::build_graph(net, {problem.placement, problem.scale, network::Head::margin_gap, false});
  const NetGraph xent = network::build_graph(net, {std::nullopt, problem.scale, network::Head::cross_entropy, false});
  const double step = ball.effective_step();
  int iterations = best.iterations;

  for (int restart = 0; restart < ball.restarts; ++restart) {
    Rng rng(mix_seed(ball.seed, static_cast<std::uint64_t>(restart)));
    std::vector<double> xp(x.begin(), x.end());
    if (restart > 0) {
      for (double& v : xp) v += rng.uniform(-ball.radius, ball.radius);
      project_to_ball(xp, x, ball);
    }
    for (int s = 0; s <= ball.steps; ++s) {
      quick.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(restart * 7919 + s));
      MarginResult m = estimate_margin(net, xp, y, problem, quick);
      iterations += m.iterations;
      if (m.value < best.value) {
        best = m;
        best.input = xp;
        if (best.value == 0.0) {
          best.iterations = iterations;
          return best;
        }
      }
      if (s == ball.steps) break;

      // descent direction for the margin at xp
      std::vector<double> grad(xp.size(), 0.0);
      if (m.feasible_delta && m.value > 0.0) {
        const auto in = gap.inputs(net, xp, y, &*m.feasible_delta);
        const auto eval = autodiff::forward(gap.graph, in);
        const auto g = autodiff::backward(gap.graph, eval, Tensor::scalar(1.0));
        double dir = 0.0;
        for (std::size_t j = 0; j < net.k(); ++j) {
          if (gap.delta_leaf[j] == network::npos) continue;
          const auto& dj = m.feasible_delta->deltas[j];
          const Tensor& gj = g[gap.delta_leaf[j]];
          for (std::size_t c = 0; c < dj.size(); ++c) dir += gj[c] * dj[c];
        }
        const Tensor& gx = g[gap.x_leaf];
        // m(x') = t(x') |||delta*|||, with gap(x', t delta*) = 0
        const double scale = dir < 0.0 ? -m.value / dir : 1.0;
        for (std::size_t i = 0; i < xp.size(); ++i) grad[i] = scale * gx[i];
      } else {
        const auto in = xent.inputs(net, xp, y);
        const auto eval = autodiff::forward(xent.graph, in);
        const auto g = autodiff::backward(xent.graph, eval, Tensor::scalar(1.0));
        for (std::size_t i = 0; i < xp.size(); ++i) grad[i] = -g[xent.x_leaf][i];
      }
      for (std::size_t i = 0; i < xp.size(); ++i) {
        if (grad[i] > 0.0) xp[i] -= step;
        if (grad[i] < 0.0) xp[i] += step;
      }
      project_to_ball(xp, x, ball);
    }
  }
  best.iterations = iterations;
  return best;
}

std::vector<MarginResult> estimate_margins(const Network& net, std::span<const std::vector<double>> xs,
                                           std::span<const std::size_t> ys, const MarginProblem& problem,
                                           const SolverConfig& cfg, unsigned threads) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::count_mismatch, "inputs and labels differ in length");
  std::vector<MarginResult> out(xs.size());
  parallel_for(xs.size(), threads, [&](std::size_t i) {
    SolverConfig c = cfg;
    c.seed = mix_seed(cfg.seed, i);
    out[i] = estimate_margin(net, xs[i], ys[i], problem, c);
  });
  return out;
}

}  // namespace allmargin::margin
