#pragma once

// Dense reverse-mode differentiation over small, immutable computation graphs.
//
// A Graph is a topologically ordered list of primitive nodes. Leaves are
// `input` nodes; everything else is computed from earlier nodes. Evaluation
// never mutates the graph, so one graph can be evaluated concurrently on
// different inputs.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "allmargin/common.hpp"

namespace allmargin::autodiff {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> row_major);
  static Tensor scalar(double value);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

enum class Activation { identity, tanh, softplus, relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

double activate(Activation a, double z);
double activate_derivative(Activation a, double z);
double activate_second_derivative(Activation a, double z);

enum class Op {
  input,
  matvec,       // matrix (m x n) times vector (n)
  activation,   // elementwise phi
  add,          // a + b, equal shapes
  scale,        // constant * a
  scalar_mul,   // vector a times 1-element tensor s
  hadamard,     // elementwise a * b
  norm2,        // ||a||_2 as a 1-element tensor
  dot,          // a . b as a 1-element tensor
  softmax_xent, // cross-entropy of logits against a target encoding
  margin_gap,   // F_y - max_{y' != y} F_y'
};

// Targets for the two loss heads: a one-hot vector for multi-class logits, or
// a single entry +1/-1 when the logits are one-dimensional (binary score).
using NodeId = std::size_t;

struct Node {
  Op op = Op::input;
  std::vector<NodeId> args;
  Activation activation = Activation::identity;
  double constant = 0.0;
  std::vector<std::size_t> shape;
  std::string name;
};

class Graph {
 public:
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  // Input node ids in declaration order; forward() expects inputs in this order.
  const std::vector<NodeId>& leaves() const noexcept { return leaves_; }
  NodeId output() const noexcept { return output_; }
  std::size_t leaf_index(NodeId id) const;

 private:
  friend class GraphBuilder;
  std::vector<Node> nodes_;
  std::vector<NodeId> leaves_;
  NodeId output_ = 0;
};

class GraphBuilder {
 public:
  NodeId input(std::string name, std::vector<std::size_t> shape);
  NodeId matvec(NodeId matrix, NodeId vec);
  NodeId activation(Activation a, NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(double c, NodeId x);
  NodeId scalar_mul(NodeId vec, NodeId scalar);
  NodeId hadamard(NodeId a, NodeId b);
  NodeId norm2(NodeId x);
  NodeId dot(NodeId a, NodeId b);
  NodeId softmax_xent(NodeId logits, NodeId target);
  NodeId margin_gap(NodeId logits, NodeId target);

  const std::vector<std::size_t>& shape(NodeId id) const { return graph_.nodes_.at(id).shape; }

  // Finalizes the graph with `output` as its result node.
  Graph build(NodeId output) const;
  // Finalizes with the most recently added node as output.
  Graph build() const;

 private:
  NodeId push(Node n);
  const Node& at(NodeId id) const;
  Graph graph_;
};

// All node values from one forward pass.
struct Evaluation {
  std::vector<Tensor> values;
  const Tensor& output(const Graph& g) const { return values.at(g.output()); }
};

Evaluation forward(const Graph& graph, std::span<const Tensor> inputs);

// Reverse pass seeded at the output. Returns one gradient per leaf, in leaf
// order. Relu uses subgradient 0 at the kink; norm2 uses 0 at the origin.
std::vector<Tensor> backward(const Graph& graph, const Evaluation& eval, const Tensor& seed);

// Output-by-leaf Jacobian; row r is the reverse pass seeded with e_r.
Tensor jacobian(const Graph& graph, std::span<const Tensor> inputs, std::size_t leaf);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0; // leaf coordinate of the worst entry
  std::size_t worst_output = 0;     // output coordinate of the worst entry
  double step = 0.0;
  // Leaf coordinates whose difference stencil touched a non-smooth point
  // (relu kink, norm at the origin, or a switch of the rival class).
  std::vector<std::size_t> nonsmooth_coordinates;
  bool nonsmooth() const { return !nonsmooth_coordinates.empty(); }
};

// Central differences on `leaf` compared entrywise to jacobian(); relative error
// uses denominator max(|a|, |b|, 1e-8).
GradCheckReport finite_diff_check(const Graph& graph, std::span<const Tensor> inputs,
                                  std::size_t leaf, double step);

struct PowerIterationConfig {
  int iterations = 50;
  double tolerance = 1e-8;
  std::uint64_t restart_seed = 0x5eedULL;
};

// Largest singular value by power iteration on M^T M, started from e_1 and from
// one seeded random vector; the larger estimate wins.
double spectral_norm(const Tensor& matrix, const PowerIterationConfig& cfg = {});

}  // namespace allmargin::autodiff
