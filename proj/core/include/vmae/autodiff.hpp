#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every differentiable quantity in the model (token matrices,
// parameters, scalar losses) is a Var; a scalar is a 1x1 Var.
//
// Graphs are built eagerly by calling the free functions below and are
// released when the last Var referring to them goes away. backward() seeds
// the root with 1 and accumulates into every reachable node that requires a
// gradient.

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace vmae {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace ad {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  void accumulate(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  // Zero-shaped-like-value matrix when no gradient reached this node.
  Matrix grad() const;
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double scalar() const;
  bool requires_grad() const { return node_->requires_grad; }
  bool valid() const { return static_cast<bool>(node_); }
  const Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
Var constant_scalar(double value);
// A leaf that collects gradients.
Var leaf(Matrix value);

void backward(const Var& root);

// Elementwise / broadcasting arithmetic.
Var add(const Var& a, const Var& b);        // same shape, or b is 1x1
Var sub(const Var& a, const Var& b);        // same shape
Var add_row(const Var& a, const Var& row);  // row (1 x cols) broadcast over a's rows
Var mul(const Var& a, const Var& b);        // Hadamard product, same shape
Var scale(const Var& a, double s);
Var square(const Var& a);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// Structural ops.
Var slice_cols(const Var& a, Index start, Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(const Var& top, const Var& bottom);
Var gather_rows(const Var& a, std::span<const int> rows);
// Blocks the gradient; the value is shared.
Var detach(const Var& a);

// Reductions to 1x1.
Var sum(const Var& a);
Var mean(const Var& a);
// Column-wise mean over rows -> 1 x cols.
Var mean_rows(const Var& a);

// Row-wise normalizations and nonlinearities.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);
Var gelu(const Var& x);
Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);
// Throws NumericError when a row has zero norm.
Var l2_normalize_rows(const Var& x);

// Sum over all entries of the numerically stable binary cross-entropy of
// logits against 0/1 targets.
Var bce_with_logits_sum(const Var& logits, const Matrix& targets);

}  // namespace ad
}  // namespace vmae
