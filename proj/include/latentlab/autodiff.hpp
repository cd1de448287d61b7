// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode automatic differentiation over dense f64 tensors.
//
// A Graph records every op in creation order, which is a valid topological
// order by construction. Nodes whose inputs do not require gradients carry
// no backward closure, so inference graphs cost one allocation per op and
// nothing more. All tensors are at most 2-D; the only broadcast supported is
// a row vector over the leading dimension (add_row, layernorm affine).
#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "latentlab/tensor.hpp"

namespace latentlab::ad {

struct Parameter {
  std::string path;
  Tensor value;
  Tensor grad;
  bool trainable = false;
};

/// Ordered collection of named parameters. References returned by add() stay
/// valid for the lifetime of the store.
class ParameterStore {
 public:
  Parameter& add(std::string path, Tensor value, bool trainable);
  Parameter& at(const std::string& path);
  const Parameter& at(const std::string& path) const;
  bool contains(const std::string& path) const { return index_.contains(path); }

  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }

  void zero_grad();
  /// Total number of scalar coordinates in trainable parameters.
  std::size_t trainable_scalar_count() const;
  std::vector<std::string> trainable_paths() const;

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while its Graph lives.
class Var {
 public:
  Var() = default;

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  /// Receives the graph, the op's output value and the gradient flowing into it.
  using BackwardFn = std::function<void(Graph&, const Tensor& out, const Tensor& out_grad)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad = true);
  /// Leaf bound to a parameter; requires grad iff the parameter is trainable.
  Var parameter(const Parameter& p);
  Var parameter(const Parameter& p, bool requires_grad);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  /// Gradient of the last backward() target with respect to v.
  const Tensor& grad(Var v) const;

  /// Reverse sweep from a scalar loss. Every requires-grad leaf ends up with
  /// a gradient; leaves the loss does not depend on get exact zeros.
  void backward(Var loss);
  bool backward_done() const { return backward_done_; }

  /// Adds leaf gradients into Parameter::grad of every bound trainable parameter.
  void accumulate_parameter_grads() const;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::string_view op_name(Var v) const { return nodes_[v.id()].op; }

  // Op-authoring interface.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn fn);
  /// Gradient accumulator for an input, or nullptr if it needs no gradient.
  Tensor* grad_buffer(Var v);

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    const Tensor* external = nullptr;
    const Parameter* param = nullptr;
    bool requires_grad = false;
    bool is_leaf = false;
    BackwardFn backward;
    Tensor grad;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;
};

// ---- ops -------------------------------------------------------------------

/// [m x k] . [k x n]
Var matmul(Var a, Var b);
/// [m x k] . [n x k]^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a length-n vector to every row of an [m x n] matrix.
Var add_row(Var a, Var row);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Row-wise softmax over the last dimension.
Var softmax_rows(Var a);
/// Sets entries where mask != 0 to `fill`. Every row must keep at least one
/// unmasked entry.
Var masked_fill(Var a, const std::vector<std::uint8_t>& mask, double fill);
Var layernorm_rows(Var x, Var gamma, Var beta, double eps);
/// Tanh-approximated GELU.
Var gelu(Var x);
/// Row lookup: out[i] = table[ids[i]].
Var embed(Var table, std::span<const std::int64_t> ids);
/// Sum over rows with weight != 0 of weight * (-log softmax(logits[i])[target[i]]).
/// Rows with zero weight are never read.
Var cross_entropy(Var logits, std::span<const std::int64_t> targets, std::span<const double> weights);
Var slice_cols(Var a, std::size_t start, std::size_t len);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var sum(Var a);
Var mean(Var a);

// ---- gradient checking -----------------------------------------------------

using GraphBuilder = std::function<Var(Graph&, std::span<const Var> leaves)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Central-difference stencil width: 2 (second order) or 4 (fourth order).
  int points = 2;
  /// Coordinates sampled per leaf tensor; 0 means all of them.
  std::size_t coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

/// Max over sampled coordinates of |analytic - central difference| /
/// max(|analytic|, |numeric|, 1e-8). Throws NumericError if two evaluations
/// of `f` on identical inputs disagree.
double grad_check(const GraphBuilder& f, std::span<const Tensor> leaves, const GradCheckOptions& options = {});

}  // namespace latentlab::ad
