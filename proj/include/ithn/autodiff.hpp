#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
//
// A graph is built eagerly: every primitive evaluates its value when it is
// created, so building the graph is also the first forward pass. forward()
// re-evaluates an existing graph in topological order after leaf values
// change, and backward() propagates d(root)/d(node) to every node that
// requires a gradient. Gradients are zeroed at the start of each backward
// and accumulate additively across fan-out.

#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ithn/tensor.hpp"

namespace ithn::ad {

struct Node;

// Shape errors name the primitive and both operand shapes.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  ShapeError(const std::string& op, const std::string& detail);
};

using EvalFn = std::function<Tensor(std::span<const Tensor* const> in)>;
// Accumulates into grad_in[k] (null when input k does not require a gradient).
using BackFn = std::function<void(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                                  std::span<Tensor* const> grad_in)>;

struct Node {
  std::string op;
  std::vector<std::shared_ptr<Node>> inputs;
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  EvalFn eval;  // empty for leaves
  BackFn back;
};

// Shared handle to a graph node. Copies alias the same node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  // Only meaningful for leaves; interior values are overwritten by forward().
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var leaf(Tensor value, bool requires_grad = true);
inline Var constant(Tensor value) { return leaf(std::move(value), false); }

// Extension point: every primitive below is built with make_op.
Var make_op(std::string op, std::vector<Var> inputs, EvalFn eval, BackFn back);

Tensor forward(const Var& root);

using GradientMap = std::unordered_map<const Node*, Tensor>;
// Root must hold exactly one element. Returns the gradients of the leaves
// that require them; every node's grad field is populated as a side effect.
GradientMap backward(const Var& root);

std::vector<Node*> topological_order(const Var& root);

// ---- primitives -----------------------------------------------------------
// All matrix primitives take rank-2 operands.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var multiply(const Var& a, const Var& b);
Var divide(const Var& a, const Var& b);
// n x d plus a 1 x d row broadcast over rows.
Var add_bias(const Var& x, const Var& bias);
// n x d times an n x 1 column broadcast over columns.
Var mul_rows(const Var& x, const Var& col);
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
Var exp(const Var& x);
Var log(const Var& x);
Var tanh(const Var& x);
Var clamp(const Var& x, double lo, double hi);
Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);

inline constexpr double kNormEpsilon = 1e-12;
// Row-wise x / (||x|| + 1e-12); the epsilon keeps the zero row finite.
Var l2_normalize_rows(const Var& x);
// m x n matrix of cos(a_i, b_j). Zero-norm rows are rejected.
Var cosine_matrix(const Var& a, const Var& b);
// n x 1 column of a_i . b_i.
Var row_dot(const Var& a, const Var& b);

Var sum(const Var& x);
Var mean(const Var& x);
// 1 x d mean of the rows.
Var mean_rows(const Var& x);
Var transpose(const Var& x);
// n x 1 column holding the diagonal of a square matrix.
Var diagonal(const Var& x);
// n x 1 column of log(sum_k exp(x_ik)), optionally skipping k == i.
Var row_logsumexp(const Var& x, bool exclude_diagonal);

Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
Var reshape(const Var& x, Shape shape);
// Gathers table rows; ids must be < table.rows().
Var embedding_lookup(const Var& table, std::span<const int> ids);
// Row-softmax of q k^T / sqrt(d) with entries j > i masked to zero weight.
Var causal_attention_weights(const Var& q, const Var& k);
// Mean over rows whose target != pad_id of -log softmax(logits_row)[target].
Var cross_entropy(const Var& logits, std::span<const int> targets, int pad_id);

}  // namespace ithn::ad
