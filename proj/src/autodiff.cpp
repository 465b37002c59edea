#include "allmargin/autodiff.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace allmargin::autodiff {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::size_t target_class(const Tensor& target) {
  return static_cast<std::size_t>(
      std::max_element(target.values().begin(), target.values().end()) - target.values().begin());
}

// Highest logit other than `y`; ties go to the lowest index.
std::size_t rival_class(const Tensor& logits, std::size_t y) {
  std::size_t best = y == 0 ? 1 : 0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (j == y) continue;
    if (logits[j] > logits[best]) best = j;
  }
  return best;
}

[[noreturn]] void shape_error(const Node& n, NodeId id, const std::string& what) {
  std::ostringstream os;
  os << "node " << id;
  if (!n.name.empty()) os << " ('" << n.name << "')";
  os << ": " << what;
  throw Error(ErrorCode::shape_mismatch, os.str());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_) {
    if (d == 0 && !data_.empty())
      throw Error(ErrorCode::shape_mismatch, "zero extent with nonempty data");
  }
  if (product(shape_) != data_.size()) {
    throw Error(ErrorCode::shape_mismatch, "data length " + std::to_string(data_.size()) +
                                               " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  const std::size_t n = product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> row_major) {
  return Tensor({rows, cols}, std::move(row_major));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::size_t Tensor::rows() const { return shape_.empty() ? 1 : shape_[0]; }

std::size_t Tensor::cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::softplus: return "softplus";
    case Activation::relu: return "relu";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "tanh") return Activation::tanh;
  if (name == "softplus") return Activation::softplus;
  if (name == "relu") return Activation::relu;
  throw Error(ErrorCode::unknown_kind, "unknown activation '" + name + "'");
}

double activate(Activation a, double z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::tanh: return std::tanh(z);
    case Activation::softplus: return softplus(z);
    case Activation::relu: return z > 0.0 ? z : 0.0;
  }
  return z;
}

double activate_derivative(Activation a, double z) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::softplus: return sigmoid(z);
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

double activate_second_derivative(Activation a, double z) {
  switch (a) {
    case Activation::identity: return 0.0;
    case Activation::tanh: {
      const double t = std::tanh(z);
      return -2.0 * t * (1.0 - t * t);
    }
    case Activation::softplus: {
      const double s = sigmoid(z);
      return s * (1.0 - s);
    }
    case Activation::relu: return 0.0;
  }
  return 0.0;
}

std::size_t Graph::leaf_index(NodeId id) const {
  auto it = std::find(leaves_.begin(), leaves_.end(), id);
  if (it == leaves_.end())
    throw Error(ErrorCode::index_out_of_range, "node " + std::to_string(id) + " is not a leaf");
  return static_cast<std::size_t>(it - leaves_.begin());
}

const Node& GraphBuilder::at(NodeId id) const {
  if (id >= graph_.nodes_.size())
    throw Error(ErrorCode::index_out_of_range, "node " + std::to_string(id) + " does not exist");
  return graph_.nodes_[id];
}

NodeId GraphBuilder::push(Node n) {
  graph_.nodes_.push_back(std::move(n));
  return graph_.nodes_.size() - 1;
}

NodeId GraphBuilder::input(std::string name, std::vector<std::size_t> shape) {
  Node n;
  n.op = Op::input;
  n.name = std::move(name);
  n.shape = std::move(shape);
  const NodeId id = push(std::move(n));
  graph_.leaves_.push_back(id);
  return id;
}

NodeId GraphBuilder::matvec(NodeId matrix, NodeId vec) {
  const Node& m = at(matrix);
  const Node& v = at(vec);
  Node n;
  n.op = Op::matvec;
  n.args = {matrix, vec};
  if (m.shape.size() != 2 || v.shape.size() != 1 || m.shape[1] != v.shape[0])
    shape_error(n, graph_.nodes_.size(),
                "matvec of " + shape_string(m.shape) + " with " + shape_string(v.shape));
  n.shape = {m.shape[0]};
  return push(std::move(n));
}

NodeId GraphBuilder::activation(Activation a, NodeId x) {
  Node n;
  n.op = Op::activation;
  n.activation = a;
  n.args = {x};
  n.shape = at(x).shape;
  return push(std::move(n));
}

NodeId GraphBuilder::add(NodeId a, NodeId b) {
  Node n;
  n.op = Op::add;
  n.args = {a, b};
  if (at(a).shape != at(b).shape)
    shape_error(n, graph_.nodes_.size(),
                "add of " + shape_string(at(a).shape) + " and " + shape_string(at(b).shape));
  n.shape = at(a).shape;
  return push(std::move(n));
}

NodeId GraphBuilder::scale(double c, NodeId x) {
  Node n;
  n.op = Op::scale;
  n.constant = c;
  n.args = {x};
  n.shape = at(x).shape;
  return push(std::move(n));
}

NodeId GraphBuilder::scalar_mul(NodeId vec, NodeId scalar) {
  Node n;
  n.op = Op::scalar_mul;
  n.args = {vec, scalar};
  if (product(at(scalar).shape) != 1)
    shape_error(n, graph_.nodes_.size(), "scalar_mul needs a 1-element scalar operand");
  n.shape = at(vec).shape;
  return push(std::move(n));
}

NodeId GraphBuilder::hadamard(NodeId a, NodeId b) {
  Node n;
  n.op = Op::hadamard;
  n.args = {a, b};
  if (at(a).shape != at(b).shape)
    shape_error(n, graph_.nodes_.size(),
                "hadamard of " + shape_string(at(a).shape) + " and " + shape_string(at(b).shape));
  n.shape = at(a).shape;
  return push(std::move(n));
}

NodeId GraphBuilder::norm2(NodeId x) {
  Node n;
  n.op = Op::norm2;
  n.args = {x};
  n.shape = {1};
  return push(std::move(n));
}

NodeId GraphBuilder::dot(NodeId a, NodeId b) {
  Node n;
  n.op = Op::dot;
  n.args = {a, b};
  if (at(a).shape != at(b).shape)
    shape_error(n, graph_.nodes_.size(),
                "dot of " + shape_string(at(a).shape) + " and " + shape_string(at(b).shape));
  n.shape = {1};
  return push(std::move(n));
}

NodeId GraphBuilder::softmax_xent(NodeId logits, NodeId target) {
  Node n;
  n.op = Op::softmax_xent;
  n.args = {logits, target};
  if (at(logits).shape.size() != 1 || at(logits).shape != at(target).shape)
    shape_error(n, graph_.nodes_.size(), "softmax_xent needs matching vector logits and target");
  n.shape = {1};
  return push(std::move(n));
}

NodeId GraphBuilder::margin_gap(NodeId logits, NodeId target) {
  Node n;
  n.op = Op::margin_gap;
  n.args = {logits, target};
  if (at(logits).shape.size() != 1 || at(logits).shape != at(target).shape)
    shape_error(n, graph_.nodes_.size(), "margin_gap needs matching vector logits and target");
  n.shape = {1};
  return push(std::move(n));
}

Graph GraphBuilder::build(NodeId output) const {
  at(output);
  Graph g = graph_;
  g.output_ = output;
  return g;
}

Graph GraphBuilder::build() const {
  if (graph_.nodes_.empty()) throw Error(ErrorCode::invalid_argument, "empty graph");
  return build(graph_.nodes_.size() - 1);
}

Evaluation forward(const Graph& graph, std::span<const Tensor> inputs) {
  const auto& nodes = graph.nodes();
  const auto& leaves = graph.leaves();
  if (inputs.size() != leaves.size()) {
    throw Error(ErrorCode::shape_mismatch, "graph expects " + std::to_string(leaves.size()) +
                                               " inputs, got " + std::to_string(inputs.size()));
  }
  Evaluation eval;
  eval.values.resize(nodes.size());
  std::size_t next_leaf = 0;
  for (NodeId id = 0; id < nodes.size(); ++id) {
    const Node& n = nodes[id];
    Tensor& out = eval.values[id];
    switch (n.op) {
      case Op::input: {
        const Tensor& in = inputs[next_leaf++];
        if (in.shape() != n.shape)
          shape_error(n, id, "input shape " + shape_string(in.shape()) + ", declared " +
                                 shape_string(n.shape));
        out = in;
        break;
      }
      case Op::matvec: {
        const Tensor& m = eval.values[n.args[0]];
        const Tensor& v = eval.values[n.args[1]];
        out = Tensor::zeros(n.shape);
        const std::size_t cols = m.cols();
        for (std::size_t r = 0; r < m.rows(); ++r) {
          double s = 0.0;
          const double* row = m.data().data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) s += row[c] * v[c];
          out[r] = s;
        }
        break;
      }
      case Op::activation: {
        const Tensor& x = eval.values[n.args[0]];
        out = x;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = activate(n.activation, x[i]);
        break;
      }
      case Op::add: {
        const Tensor& a = eval.values[n.args[0]];
        const Tensor& b = eval.values[n.args[1]];
        out = a;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
        break;
      }
      case Op::scale: {
        out = eval.values[n.args[0]];
        for (double& v : out.values()) v *= n.constant;
        break;
      }
      case Op::scalar_mul: {
        out = eval.values[n.args[0]];
        const double s = eval.values[n.args[1]][0];
        for (double& v : out.values()) v *= s;
        break;
      }
      case Op::hadamard: {
        const Tensor& a = eval.values[n.args[0]];
        const Tensor& b = eval.values[n.args[1]];
        out = a;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
        break;
      }
      case Op::norm2: {
        out = Tensor::scalar(allmargin::norm2(eval.values[n.args[0]].values()));
        break;
      }
      case Op::dot: {
        const Tensor& a = eval.values[n.args[0]];
        const Tensor& b = eval.values[n.args[1]];
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        out = Tensor::scalar(s);
        break;
      }
      case Op::softmax_xent: {
        const Tensor& f = eval.values[n.args[0]];
        const Tensor& t = eval.values[n.args[1]];
        if (f.size() == 1) {
          out = Tensor::scalar(softplus(-t[0] * f[0]));
        } else {
          const double mx = *std::max_element(f.values().begin(), f.values().end());
          double z = 0.0;
          for (double v : f.values()) z += std::exp(v - mx);
          const double lse = mx + std::log(z);
          double loss = 0.0;
          for (std::size_t i = 0; i < f.size(); ++i) loss += t[i] * (lse - f[i]);
          out = Tensor::scalar(loss);
        }
        break;
      }
      case Op::margin_gap: {
        const Tensor& f = eval.values[n.args[0]];
        const Tensor& t = eval.values[n.args[1]];
        if (f.size() == 1) {
          out = Tensor::scalar(t[0] * f[0]);
        } else {
          const std::size_t y = target_class(t);
          out = Tensor::scalar(f[y] - f[rival_class(f, y)]);
        }
        break;
      }
    }
  }
  return eval;
}

std::vector<Tensor> backward(const Graph& graph, const Evaluation& eval, const Tensor& seed) {
  const auto& nodes = graph.nodes();
  if (eval.values.size() != nodes.size())
    throw Error(ErrorCode::invalid_argument, "evaluation does not belong to this graph");
  const NodeId out_id = graph.output();
  if (seed.shape() != nodes[out_id].shape) {
    throw Error(ErrorCode::shape_mismatch, "seed shape " + shape_string(seed.shape()) +
                                               " does not match output shape " +
                                               shape_string(nodes[out_id].shape));
  }
  std::vector<Tensor> grads(nodes.size());
  std::vector<bool> live(nodes.size(), false);
  grads[out_id] = seed;
  live[out_id] = true;
  auto touch = [&](NodeId id) -> Tensor& {
    if (!live[id]) {
      grads[id] = Tensor::zeros(nodes[id].shape);
      live[id] = true;
    }
    return grads[id];
  };

  for (NodeId id = out_id + 1; id-- > 0;) {
    if (!live[id]) continue;
    const Node& n = nodes[id];
    const Tensor& g = grads[id];
    switch (n.op) {
      case Op::input: break;
      case Op::matvec: {
        const Tensor& m = eval.values[n.args[0]];
        const Tensor& v = eval.values[n.args[1]];
        Tensor& gm = touch(n.args[0]);
        Tensor& gv = touch(n.args[1]);
        const std::size_t cols = m.cols();
        for (std::size_t r = 0; r < m.rows(); ++r) {
          const double gr = g[r];
          const double* row = m.data().data() + r * cols;
          double* grow = gm.values().data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) {
            grow[c] += gr * v[c];
            gv[c] += gr * row[c];
          }
        }
        break;
      }
      case Op::activation: {
        const Tensor& x = eval.values[n.args[0]];
        Tensor& gx = touch(n.args[0]);
        for (std::size_t i = 0; i < x.size(); ++i)
          gx[i] += g[i] * activate_derivative(n.activation, x[i]);
        break;
      }
      case Op::add: {
        add_into(touch(n.args[0]), g);
        add_into(touch(n.args[1]), g);
        break;
      }
      case Op::scale: {
        Tensor& gx = touch(n.args[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.constant * g[i];
        break;
      }
      case Op::scalar_mul: {
        const Tensor& v = eval.values[n.args[0]];
        const double s = eval.values[n.args[1]][0];
        Tensor& gv = touch(n.args[0]);
        double gs = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          gv[i] += g[i] * s;
          gs += g[i] * v[i];
        }
        touch(n.args[1])[0] += gs;
        break;
      }
      case Op::hadamard: {
        const Tensor& a = eval.values[n.args[0]];
        const Tensor& b = eval.values[n.args[1]];
        Tensor& ga = touch(n.args[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
        Tensor& gb = touch(n.args[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
        break;
      }
      case Op::norm2: {
        const Tensor& x = eval.values[n.args[0]];
        const double nv = eval.values[id][0];
        Tensor& gx = touch(n.args[0]);
        if (nv > 0.0) {
          for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[0] * x[i] / nv;
        }
        break;
      }
      case Op::dot: {
        const Tensor& a = eval.values[n.args[0]];
        const Tensor& b = eval.values[n.args[1]];
        Tensor& ga = touch(n.args[0]);
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[0] * b[i];
        Tensor& gb = touch(n.args[1]);
        for (std::size_t i = 0; i < a.size(); ++i) gb[i] += g[0] * a[i];
        break;
      }
      case Op::softmax_xent: {
        const Tensor& f = eval.values[n.args[0]];
        const Tensor& t = eval.values[n.args[1]];
        Tensor& gf = touch(n.args[0]);
        Tensor& gt = touch(n.args[1]);
        if (f.size() == 1) {
          const double s = sigmoid(-t[0] * f[0]);
          gf[0] += g[0] * (-t[0] * s);
          gt[0] += g[0] * (-f[0] * s);
        } else {
          const double mx = *std::max_element(f.values().begin(), f.values().end());
          double z = 0.0;
          for (double v : f.values()) z += std::exp(v - mx);
          const double lse = mx + std::log(z);
          double tsum = 0.0;
          for (double v : t.values()) tsum += v;
          for (std::size_t i = 0; i < f.size(); ++i) {
            gf[i] += g[0] * (tsum * std::exp(f[i] - lse) - t[i]);
            gt[i] += g[0] * (lse - f[i]);
          }
        }
        break;
      }
      case Op::margin_gap: {
        const Tensor& f = eval.values[n.args[0]];
        const Tensor& t = eval.values[n.args[1]];
        Tensor& gf = touch(n.args[0]);
        Tensor& gt = touch(n.args[1]);
        if (f.size() == 1) {
          gf[0] += g[0] * t[0];
          gt[0] += g[0] * f[0];
        } else {
          const std::size_t y = target_class(t);
          gf[y] += g[0];
          gf[rival_class(f, y)] -= g[0];
        }
        break;
      }
    }
  }

  std::vector<Tensor> out;
  out.reserve(graph.leaves().size());
  for (NodeId leaf : graph.leaves()) {
    out.push_back(live[leaf] ? grads[leaf] : Tensor::zeros(nodes[leaf].shape));
  }
  return out;
}

Tensor jacobian(const Graph& graph, std::span<const Tensor> inputs, std::size_t leaf) {
  const auto& out_shape = graph.node(graph.output()).shape;
  if (out_shape.size() != 1)
    throw Error(ErrorCode::shape_mismatch, "jacobian needs a vector output, got " +
                                               shape_string(out_shape));
  if (leaf >= graph.leaves().size())
    throw Error(ErrorCode::index_out_of_range, "leaf " + std::to_string(leaf));
  const Evaluation eval = forward(graph, inputs);
  const std::size_t m = out_shape[0];
  const std::size_t n = inputs[leaf].size();
  Tensor jac = Tensor::zeros({m, n});
  Tensor seed = Tensor::zeros(out_shape);
  for (std::size_t r = 0; r < m; ++r) {
    seed[r] = 1.0;
    const std::vector<Tensor> grads = backward(graph, eval, seed);
    for (std::size_t c = 0; c < n; ++c) jac.at(r, c) = grads[leaf][c];
    seed[r] = 0.0;
  }
  return jac;
}

namespace {

// Sign/selection pattern of every non-smooth primitive in one evaluation.
std::vector<int> kink_pattern(const Graph& graph, const Evaluation& eval) {
  std::vector<int> pattern;
  const auto& nodes = graph.nodes();
  for (NodeId id = 0; id < nodes.size(); ++id) {
    const Node& n = nodes[id];
    if (n.op == Op::activation && n.activation == Activation::relu) {
      for (double z : eval.values[n.args[0]].values()) pattern.push_back(z > 0.0 ? 1 : (z < 0.0 ? -1 : 0));
    } else if (n.op == Op::norm2) {
      pattern.push_back(eval.values[id][0] > 0.0 ? 1 : 0);
    } else if (n.op == Op::margin_gap && eval.values[n.args[0]].size() > 1) {
      const Tensor& f = eval.values[n.args[0]];
      pattern.push_back(static_cast<int>(rival_class(f, target_class(eval.values[n.args[1]]))));
    }
  }
  return pattern;
}

}  // namespace

GradCheckReport finite_diff_check(const Graph& graph, std::span<const Tensor> inputs,
                                  std::size_t leaf, double step) {
  if (!(step > 0.0)) throw Error(ErrorCode::invalid_argument, "finite-difference step must be > 0");
  const Tensor analytic = jacobian(graph, inputs, leaf);
  const Evaluation center = forward(graph, inputs);
  const std::vector<int> center_pattern = kink_pattern(graph, center);

  GradCheckReport report;
  report.step = step;
  std::vector<Tensor> shifted(inputs.begin(), inputs.end());
  const std::size_t m = analytic.rows();
  const std::size_t n = inputs[leaf].size();
  for (std::size_t c = 0; c < n; ++c) {
    const double x0 = shifted[leaf][c];
    shifted[leaf][c] = x0 + step;
    const Evaluation plus = forward(graph, shifted);
    shifted[leaf][c] = x0 - step;
    const Evaluation minus = forward(graph, shifted);
    shifted[leaf][c] = x0;

    if (kink_pattern(graph, plus) != center_pattern ||
        kink_pattern(graph, minus) != center_pattern) {
      report.nonsmooth_coordinates.push_back(c);
    }
    const Tensor& fp = plus.output(graph);
    const Tensor& fm = minus.output(graph);
    for (std::size_t r = 0; r < m; ++r) {
      const double numeric = (fp[r] - fm[r]) / (2.0 * step);
      const double exact = analytic.at(r, c);
      const double denom = std::max({std::abs(numeric), std::abs(exact), 1e-8});
      const double rel = std::abs(numeric - exact) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_coordinate = c;
        report.worst_output = r;
      }
    }
  }
  return report;
}

namespace {

double power_iterate(const Tensor& m, std::vector<double> v, const PowerIterationConfig& cfg) {
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  std::vector<double> w(rows), u(cols);
  double nv = allmargin::norm2(v);
  if (nv == 0.0) return 0.0;
  for (double& x : v) x /= nv;
  double sigma = 0.0;
  double previous = -1.0;
  for (int it = 0; it < cfg.iterations; ++it) {
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += m.at(r, c) * v[c];
      w[r] = s;
    }
    sigma = allmargin::norm2(w);
    if (sigma == 0.0) break;
    if (previous >= 0.0 && std::abs(sigma - previous) <= cfg.tolerance * sigma) break;
    previous = sigma;
    std::fill(u.begin(), u.end(), 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) u[c] += m.at(r, c) * w[r];
    const double nu = allmargin::norm2(u);
    if (nu == 0.0) break;
    for (std::size_t c = 0; c < cols; ++c) v[c] = u[c] / nu;
  }
  return sigma;
}

}  // namespace

double spectral_norm(const Tensor& matrix, const PowerIterationConfig& cfg) {
  if (matrix.rank() != 2) throw Error(ErrorCode::shape_mismatch, "spectral_norm needs a matrix");
  const std::size_t cols = matrix.cols();
  if (matrix.size() == 0) return 0.0;
  std::vector<double> e1(cols, 0.0);
  e1[0] = 1.0;
  const double a = power_iterate(matrix, e1, cfg);
  Rng rng(cfg.restart_seed);
  std::vector<double> r(cols);
  for (double& x : r) x = rng.normal();
  const double b = power_iterate(matrix, r, cfg);
  return std::max(a, b);
}

}  // namespace allmargin::autodiff
