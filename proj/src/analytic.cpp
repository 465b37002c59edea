#include "allmargin/analytic.hpp"

#include <algorithm>
#include <cmath>

namespace allmargin::analytic {

namespace {

void require_smooth(const Network& net) {
  if (net.activation() == network::Activation::relu)
    throw Error(ErrorCode::requires_smooth_activation, "the kappa quantities need a smooth activation, got relu");
}

double ratio(double num, double den) {
  if (den == 0.0) {
    if (num == 0.0) return 0.0;
    throw Error(ErrorCode::degenerate_input, "an interlayer Jacobian or hidden layer has zero norm");
  }
  return num / den;
}

struct Setup {
  network::ForwardTrace trace;
  network::KappaTable table;
  std::vector<double> norms;
};

Setup prepare(const Network& net, std::span<const double> x, std::size_t y) {
  require_smooth(net);
  if (x.size() != net.input_dim())
    throw Error(ErrorCode::shape_mismatch, "input has " + std::to_string(x.size()) + " entries, net expects " +
                                               std::to_string(net.input_dim()));
  auto trace = network::forward_trace(net, x, y);
  if (!(trace.gamma > 0.0))
    throw Error(ErrorCode::undefined_at_misclassified, "output margin is 0 at this example");
  std::vector<double> norms;
  for (const auto& h : trace.hidden) norms.push_back(norm2(h));
  return {std::move(trace), network::KappaTable(net, x), std::move(norms)};
}

void fill_kappa_nn(const Network& net, const Setup& s, KappaReport& rep) {
  const std::size_t r = net.r(), k = net.k();
  const auto& T = s.table;
  const double kp = net.kappa_prime();
  const double gamma = s.trace.gamma;
  rep.gamma = gamma;
  rep.hidden_norms = s.norms;
  rep.kappa_prime = kp;
  rep.leading.assign(r, 0.0);
  rep.psi_sums.assign(r, {0.0, 0.0, 0.0});
  rep.psi.assign(r, 0.0);
  rep.kappa_nn.assign(r, 0.0);
  for (std::size_t i = 1; i <= r; ++i) {
    const double si = s.norms[2 * i - 2];
    rep.leading[i - 1] = si * T.at(2 * i, k) / gamma;
    auto& sums = rep.psi_sums[i - 1];
    for (std::size_t j = i; j + 1 <= r; ++j) sums[0] += ratio(si * T.at(2 * i, 2 * j), s.norms[2 * j]);
    for (std::size_t j = 1; j <= 2 * i - 1; ++j)
      for (std::size_t jp = 2 * i - 1; jp <= k; ++jp)
        sums[1] += ratio(T.at(2 * i, jp) * T.at(j, 2 * i - 2), T.at(j, jp));
    if (kp != 0.0)
      for (std::size_t j = 1; j <= k; ++j)
        for (std::size_t jp = j; jp <= k; ++jp)
          for (std::size_t jpp = std::max(2 * i, j); jpp <= jp; ++jpp) {
            if (jpp % 2 != 0) continue;
            sums[2] += ratio(kp * T.at(jpp + 1, jp) * T.at(2 * i, jpp - 1) * T.at(j, jpp - 1) * si, T.at(j, jp));
          }
    rep.psi[i - 1] = sums[0] + sums[1] + sums[2];
    rep.kappa_nn[i - 1] = rep.leading[i - 1] + rep.psi[i - 1];
  }
}

double dual_exponent(double p) {
  if (p == 1.0) return kInfinity;
  if (std::isinf(p)) return 1.0;
  return p / (p - 1.0);
}

double l_q_moment(std::span<const double> v, int q) {
  std::vector<double> powers(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) powers[i] = std::pow(v[i], q);
  return std::pow(pairwise_sum(powers) / static_cast<double>(v.size()), 1.0 / q);
}

}  // namespace

KappaReport kappa_nn(const Network& net, std::span<const double> x, std::size_t y) {
  const Setup s = prepare(net, x, y);
  KappaReport rep;
  fill_kappa_nn(net, s, rep);
  return rep;
}

KappaReport kappa_star(const Network& net, std::span<const double> x, std::size_t y,
                       std::span<const double> layer_kappa_prime) {
  const Setup s = prepare(net, x, y);
  const std::size_t k = net.k();
  KappaReport rep;
  fill_kappa_nn(net, s, rep);
  if (layer_kappa_prime.empty()) {
    rep.layer_kappa_prime.assign(k, 0.0);
    for (std::size_t j = 2; j <= k; j += 2) rep.layer_kappa_prime[j - 1] = net.kappa_prime();
  } else {
    if (layer_kappa_prime.size() != k)
      throw Error(ErrorCode::shape_mismatch, "need one kappa' per layer (" + std::to_string(k) + "), got " +
                                                 std::to_string(layer_kappa_prime.size()));
    for (double v : layer_kappa_prime)
      if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "kappa' must be finite and >= 0");
    rep.layer_kappa_prime.assign(layer_kappa_prime.begin(), layer_kappa_prime.end());
  }
  const auto& T = s.table;
  const auto& kp = rep.layer_kappa_prime;
  const double gamma = s.trace.gamma;
  rep.star_blocks.assign(k, {0.0, 0.0, 0.0});
  rep.kappa_star.assign(k, 0.0);
  for (std::size_t i = 1; i <= k; ++i) {
    const double si = s.norms[i - 1];
    auto& b = rep.star_blocks[i - 1];
    double inner = 8.0 * T.at(i + 1, k) / gamma;
    for (std::size_t j = i; j + 1 <= k; ++j) inner += ratio(8.0 * T.at(i + 1, j), s.norms[j]);
    b[0] = si * inner;

    double second = 0.0;
    for (std::size_t j2 = 1; j2 <= k; ++j2)
      for (std::size_t j1 = j2; j1 <= k; ++j1)
        for (std::size_t jp = std::max(i + 1, j2); jp <= j1; ++jp) {
          if (kp[jp - 1] == 0.0) continue;
          second += ratio(16.0 * kp[jp - 1] * T.at(i + 1, jp - 1) * T.at(jp + 1, j1) * T.at(j2, jp - 1),
                          T.at(j2, j1));
        }
    b[1] = si * second;

    for (std::size_t j2 = 1; j2 <= i; ++j2)
      for (std::size_t j1 = i; j1 <= k; ++j1)
        b[2] += ratio(8.0 * T.at(i + 1, j1) * T.at(j2, i - 1), T.at(j2, j1));
    rep.kappa_star[i - 1] = b[0] + b[1] + b[2];
  }
  return rep;
}

KappaReport kappa_adv(const Network& net, std::span<const double> x, std::size_t y, const AttackSpec& ball) {
  KappaReport rep = kappa_nn(net, x, y);
  rep.kappa_adv = rep.kappa_nn;
  const AttackResult attack = pgd_attack(net, x, y, ball, true);
  for (const auto& xp : attack.visited) {
    if (!(network::forward_trace(net, xp, y).gamma > 0.0)) {
      std::fill(rep.kappa_adv.begin(), rep.kappa_adv.end(), kInfinity);
      return rep;
    }
    const KappaReport at = kappa_nn(net, xp, y);
    for (std::size_t i = 0; i < at.kappa_nn.size(); ++i) rep.kappa_adv[i] = std::max(rep.kappa_adv[i], at.kappa_nn[i]);
  }
  return rep;
}

MarginResult margin_lower_bound(const Network& net, std::span<const double> x, std::size_t y,
                                const std::optional<MarginProblem>& problem) {
  require_smooth(net);
  MarginResult out;
  out.kind = margin::MarginKind::analytic_lower_bound;
  const auto trace = network::forward_trace(net, x, y);
  out.gamma = trace.gamma;
  if (!(trace.gamma > 0.0)) return out;

  if (!problem) {
    const KappaReport rep = kappa_nn(net, x, y);
    out.value = 1.0 / norm2(rep.kappa_nn);
    return out;
  }
  if (problem->scale != network::ScaleMode::pre_scale)
    throw Error(ErrorCode::invalid_argument, "the analytic lower bound covers pre-scale perturbations only");
  const NormSpec norm = problem->norm_for(net);
  const KappaReport rep = kappa_star(net, x, y);
  std::vector<double> terms;
  for (std::size_t j = 1; j <= net.k(); ++j) {
    if (!network::placement_allows(problem->placement, j, net.k())) continue;
    const double a = norm.alpha[j - 1];
    terms.push_back(std::isinf(a) ? 0.0 : rep.kappa_star[j - 1] / a);
  }
  const double agg = network::lp_norm(terms, dual_exponent(norm.p));
  out.value = agg > 0.0 ? 1.0 / agg : kInfinity;
  return out;
}

double layer_complexity(const Tensor& w, const Tensor& a, const Tensor& b, std::size_t d) {
  if (w.shape() != a.shape() || w.shape() != b.shape())
    throw Error(ErrorCode::shape_mismatch, "reference matrices " + autodiff::shape_string(a.shape()) + " and " +
                                               autodiff::shape_string(b.shape()) + " do not match W " +
                                               autodiff::shape_string(w.shape()));
  if (d < 2) throw Error(ErrorCode::invalid_argument, "layer complexity needs d >= 2");
  std::vector<double> diff_a(w.size()), diff_b(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    diff_a[i] = w[i] - a[i];
    diff_b[i] = std::abs(w[i] - b[i]);
  }
  const double fro = std::sqrt(static_cast<double>(d)) * norm2(diff_a);
  const double l11 = pairwise_sum(diff_b);
  return std::min(fro, l11) * std::sqrt(std::log(static_cast<double>(d)));
}

double layer_complexity(const Tensor& w, std::size_t d) {
  const Tensor zero = Tensor::zeros(w.shape());
  return layer_complexity(w, zero, zero, d);
}

double composite_complexity(std::span<const double> alpha, double p, std::span<const double> c) {
  if (alpha.size() != c.size())
    throw Error(ErrorCode::shape_mismatch, std::to_string(alpha.size()) + " weights for " + std::to_string(c.size()) +
                                               " complexities");
  if (!(p >= 1.0)) throw Error(ErrorCode::invalid_argument, "p must be >= 1");
  const double e = std::isinf(p) ? 2.0 : 2.0 * p / (p + 2.0);
  std::vector<double> terms;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!(alpha[i] >= 0.0) || !(c[i] >= 0.0) || std::isinf(c[i]))
      throw Error(ErrorCode::invalid_argument, "alpha and complexities must be >= 0");
    if (std::isinf(alpha[i])) {
      if (c[i] > 0.0)
        throw Error(ErrorCode::frozen_layer_complexity,
                    "layer " + std::to_string(i + 1) + " is frozen but has complexity " + std::to_string(c[i]));
      continue;
    }
    terms.push_back(std::pow(alpha[i] * c[i], e));
  }
  return std::pow(pairwise_sum(terms), 1.0 / e);
}

ComplexityReport complexity_report(const Network& net, const NormSpec& norm, std::span<const Tensor> a_refs,
                                   std::span<const Tensor> b_refs) {
  const std::size_t r = net.r(), k = net.k();
  if ((!a_refs.empty() && a_refs.size() != r) || (!b_refs.empty() && b_refs.size() != r))
    throw Error(ErrorCode::shape_mismatch, "need one reference matrix per weight matrix");
  if (norm.alpha.size() != k)
    throw Error(ErrorCode::shape_mismatch, "norm spec has " + std::to_string(norm.alpha.size()) + " weights for " +
                                               std::to_string(k) + " layers");
  ComplexityReport rep;
  rep.d = net.max_width();
  rep.norm = norm;
  rep.layer_c.assign(k, 0.0);
  for (std::size_t i = 1; i <= r; ++i) {
    const Tensor& w = net.weight(i);
    const Tensor zero = Tensor::zeros(w.shape());
    const double a = layer_complexity(w, a_refs.empty() ? zero : a_refs[i - 1], b_refs.empty() ? zero : b_refs[i - 1],
                                      rep.d);
    rep.a.push_back(a);
    rep.layer_c[2 * i - 2] = a;
  }
  rep.c_gnorm = composite_complexity(norm.alpha, norm.p, rep.layer_c);
  return rep;
}

double surrogate_loss(double m, double beta) {
  if (!(beta > 0.0)) throw Error(ErrorCode::invalid_argument, "beta must be > 0");
  if (std::isnan(m)) throw Error(ErrorCode::invalid_argument, "margin is NaN");
  if (m <= 0.0) return 1.0;
  return std::erfc(m * std::sqrt(beta / 2.0));
}

double alpha_objective(std::span<const double> alpha, std::span<const double> z, std::span<const double> b, int q) {
  if (alpha.size() != z.size() || z.size() != b.size())
    throw Error(ErrorCode::shape_mismatch, "alpha, z and b differ in length");
  if (q < 1) throw Error(ErrorCode::invalid_argument, "q must be a positive integer");
  const double e = 2.0 * q / (3.0 * q - 2.0);
  std::vector<double> first(z.size()), second(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    first[i] = std::pow(z[i] / alpha[i], q);
    second[i] = std::pow(alpha[i] * b[i], e);
  }
  return pairwise_sum(first) + std::pow(pairwise_sum(second), (3.0 * q - 2.0) / q);
}

AlphaSolution optimal_alpha(std::span<const double> z, std::span<const double> b, int q) {
  if (z.empty() || z.size() != b.size()) throw Error(ErrorCode::shape_mismatch, "z and b must be nonempty, equal length");
  if (q < 1) throw Error(ErrorCode::invalid_argument, "q must be a positive integer");
  for (std::size_t i = 0; i < z.size(); ++i)
    if (!(z[i] > 0.0) || !(b[i] > 0.0) || std::isinf(z[i]) || std::isinf(b[i]))
      throw Error(ErrorCode::degenerate_input, "z and b must be finite and > 0; freeze zero-complexity layers instead");
  const double qd = q;
  std::vector<double> zb(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) zb[i] = std::pow(z[i] * b[i], 2.0 / 3.0);
  const double sum = pairwise_sum(zb);
  const double shared = std::pow(qd / 2.0, 1.0 / (qd + 2.0)) * std::pow(sum, (2.0 - 2.0 * qd) / (qd * (qd + 2.0)));
  AlphaSolution sol;
  for (std::size_t i = 0; i < z.size(); ++i)
    sol.alpha.push_back(shared * std::pow(z[i], (3.0 * qd - 2.0) / (3.0 * qd)) * std::pow(b[i], -2.0 / (3.0 * qd)));
  sol.value = alpha_objective(sol.alpha, z, b, q);
  sol.upper_bound = 2.0 * std::pow(sum, 3.0 * qd / (qd + 2.0));
  sol.holds = sol.value <= sol.upper_bound * (1.0 + 1e-12);
  return sol;
}

std::string to_string(Theorem t) {
  switch (t) {
    case Theorem::simple: return "simple";
    case Theorem::compl_m_gen: return "compl-m-gen";
    case Theorem::nn_gen: return "nn-gen";
    case Theorem::adv_nn_gen: return "adv-nn-gen";
    case Theorem::smooth_gen: return "smooth-gen";
  }
  return "unknown";
}

Theorem theorem_from_string(const std::string& name) {
  for (Theorem t : {Theorem::simple, Theorem::compl_m_gen, Theorem::nn_gen, Theorem::adv_nn_gen, Theorem::smooth_gen})
    if (to_string(t) == name) return t;
  throw Error(ErrorCode::unknown_kind, "unknown theorem '" + name + "'");
}

BoundReport bound_report(const BoundInput& in) {
  if (in.q < 1) throw Error(ErrorCode::invalid_argument, "q must be a positive integer");
  if (!(in.confidence > 0.0 && in.confidence < 1.0))
    throw Error(ErrorCode::invalid_argument, "confidence delta must lie in (0, 1)");
  for (double c : in.complexities)
    if (!(c >= 0.0) || std::isinf(c)) throw Error(ErrorCode::invalid_argument, "complexities must be finite and >= 0");

  BoundReport rep;
  rep.theorem = in.theorem;
  rep.q = in.theorem == Theorem::simple ? 2 : in.q;
  rep.confidence = in.confidence;
  rep.complexities = in.complexities;
  const double q = rep.q;
  const double log_conf = std::log(1.0 / in.confidence);

  if (in.theorem == Theorem::simple || in.theorem == Theorem::compl_m_gen) {
    if (in.margins.empty()) throw Error(ErrorCode::empty_dataset, "no margins given");
    rep.n = in.margins.size();
    std::vector<double> inv;
    for (double m : in.margins) {
      if (std::isnan(m) || m < 0.0) throw Error(ErrorCode::invalid_argument, "margins must be >= 0");
      if (m == 0.0)
        throw Error(ErrorCode::theorem_precondition_violated, "a margin is 0; the theorem needs training error 0");
      inv.push_back(1.0 / m);
    }
    const double n = static_cast<double>(rep.n);
    const double log_n = std::log(n);
    rep.inverse_margin_moment = l_q_moment(inv, rep.q);
    if (in.theorem == Theorem::simple) {
      rep.c_gnorm = pairwise_sum(in.complexities);
      rep.leading = rep.c_gnorm / std::sqrt(n) * rep.inverse_margin_moment * log_n * log_n;
    } else {
      const NormSpec norm = in.norm ? *in.norm : NormSpec::uniform(in.complexities.size());
      rep.c_gnorm = composite_complexity(norm.alpha, norm.p, in.complexities);
      rep.leading = std::pow(rep.inverse_margin_moment * rep.c_gnorm / std::sqrt(n), 2.0 * q / (q + 2.0)) * q *
                    log_n * log_n;
    }
    rep.beta = q * std::pow(n * std::pow(rep.inverse_margin_moment, q) / (rep.c_gnorm * rep.c_gnorm * log_n * log_n),
                            2.0 / (q + 2.0));
    rep.zeta = (log_conf + log_n) / n;
  } else {
    if (in.kappas.empty()) throw Error(ErrorCode::empty_dataset, "no kappa rows given");
    const std::size_t layers = in.complexities.size();
    rep.n = in.kappas.size();
    const double n = static_cast<double>(rep.n);
    const double log_n = std::log(n);
    for (std::size_t i = 0; i < layers; ++i) {
      std::vector<double> col;
      for (const auto& row : in.kappas) {
        if (row.size() != layers)
          throw Error(ErrorCode::shape_mismatch, "kappa row has " + std::to_string(row.size()) + " entries for " +
                                                     std::to_string(layers) + " layers");
        if (!std::isfinite(row[i]))
          throw Error(ErrorCode::theorem_precondition_violated, "a kappa is infinite; the theorem needs training error 0");
        if (row[i] < 0.0) throw Error(ErrorCode::invalid_argument, "kappas must be >= 0");
        col.push_back(row[i]);
      }
      rep.kappa_moments.push_back(l_q_moment(col, rep.q));
    }
    std::vector<double> terms;
    for (std::size_t i = 0; i < layers; ++i)
      terms.push_back(std::pow(rep.kappa_moments[i] * in.complexities[i], 2.0 / 3.0));
    const double s = std::pow(pairwise_sum(terms), 3.0 * q / (q + 2.0));
    if (in.theorem == Theorem::smooth_gen) {
      rep.leading = q * std::pow(log_n * log_n / n, q / (q + 2.0)) * s;
      rep.zeta = (static_cast<double>(layers) * log_n + log_conf) / n;
    } else {
      rep.leading = s * q * log_n * log_n / std::pow(n, q / (q + 2.0));
      double log_a = 0.0;
      for (double a : in.complexities) log_a += std::log(a + 1.0);
      rep.zeta = (static_cast<double>(layers) * log_n + log_conf + log_a) / n;
    }
    rep.beta = 1.0;
    std::vector<double> z, b;
    for (std::size_t i = 0; i < layers; ++i) {
      z.push_back(std::sqrt(q) * rep.kappa_moments[i]);
      b.push_back(in.complexities[i] * log_n / std::sqrt(n));
    }
    const bool usable = std::all_of(z.begin(), z.end(), [](double v) { return v > 0.0; }) &&
                        std::all_of(b.begin(), b.end(), [](double v) { return v > 0.0; });
    if (usable && layers > 0) rep.alpha = optimal_alpha(z, b, rep.q);
  }
  rep.total = rep.leading + rep.zeta;
  return rep;
}

nlohmann::json to_json(const BoundReport& r) {
  nlohmann::json j;
  j["theorem"] = to_string(r.theorem);
  j["constants_policy"] = kConstantsPolicy;
  j["n"] = r.n;
  j["q"] = r.q;
  j["confidence"] = r.confidence;
  j["inverse_margin_moment"] = r.inverse_margin_moment;
  j["kappa_moments"] = r.kappa_moments;
  j["complexities"] = r.complexities;
  j["c_gnorm"] = r.c_gnorm;
  j["beta"] = r.beta;
  j["leading"] = r.leading;
  j["zeta"] = r.zeta;
  j["total"] = r.total;
  if (r.alpha)
    j["alpha"] = {{"alpha", r.alpha->alpha},
                  {"value", r.alpha->value},
                  {"upper_bound", r.alpha->upper_bound},
                  {"holds", r.alpha->holds}};
  return j;
}

std::vector<KappaReport> kappa_dataset(const Network& net, std::span<const std::vector<double>> xs,
                                       std::span<const std::size_t> ys, unsigned threads) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::count_mismatch, "inputs and labels differ in length");
  require_smooth(net);
  std::vector<KappaReport> out(xs.size());
  parallel_for(xs.size(), threads, [&](std::size_t i) {
    if (network::forward_trace(net, xs[i], ys[i]).gamma > 0.0) out[i] = kappa_nn(net, xs[i], ys[i]);
  });
  return out;
}

}  // namespace allmargin::analytic
