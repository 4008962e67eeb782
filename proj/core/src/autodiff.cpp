#include "vmae/autodiff.hpp"

#include "vmae/errors.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace vmae::ad {

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Matrix Var::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

double Var::scalar() const {
  if (node_->value.size() != 1) throw StructuralError("scalar() on a non 1x1 value");
  return node_->value(0, 0);
}

namespace {

using NodePtr = std::shared_ptr<Node>;

Var make(Matrix value, std::vector<NodePtr> inputs, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in->requires_grad;
  if (any) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(bw);
  }
  return Var(std::move(node));
}

void expect_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream os;
    os << op << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
       << b.cols();
    throw StructuralError(os.str());
  }
}

inline void push(Node& self, std::size_t i, const Matrix& g) {
  if (self.inputs[i]->requires_grad) self.inputs[i]->accumulate(g);
}

}  // namespace

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var constant_scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var leaf(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (root.value().size() != 1) throw StructuralError("backward() requires a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  Node* start = root.shared().get();
  stack.emplace_back(start, 0);
  seen.insert(start);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.shared()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

Var add(const Var& a, const Var& b) {
  if (b.rows() == 1 && b.cols() == 1 && (a.rows() != 1 || a.cols() != 1)) {
    Matrix v = a.value().array() + b.scalar();
    return make(std::move(v), {a.shared(), b.shared()}, [](Node& self) {
      push(self, 0, self.grad);
      push(self, 1, Matrix::Constant(1, 1, self.grad.sum()));
    });
  }
  expect_same_shape(a, b, "add");
  return make(a.value() + b.value(), {a.shared(), b.shared()}, [](Node& self) {
    push(self, 0, self.grad);
    push(self, 1, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  expect_same_shape(a, b, "sub");
  return make(a.value() - b.value(), {a.shared(), b.shared()}, [](Node& self) {
    push(self, 0, self.grad);
    push(self, 1, -self.grad);
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw StructuralError("add_row: broadcast row must be 1 x cols(a)");
  }
  Matrix v = a.value();
  v.rowwise() += row.value().row(0);
  return make(std::move(v), {a.shared(), row.shared()}, [](Node& self) {
    push(self, 0, self.grad);
    push(self, 1, self.grad.colwise().sum());
  });
}

Var mul(const Var& a, const Var& b) {
  expect_same_shape(a, b, "mul");
  Matrix v = a.value().cwiseProduct(b.value());
  return make(std::move(v), {a.shared(), b.shared()}, [](Node& self) {
    push(self, 0, self.grad.cwiseProduct(self.inputs[1]->value));
    push(self, 1, self.grad.cwiseProduct(self.inputs[0]->value));
  });
}

Var scale(const Var& a, double s) {
  return make(a.value() * s, {a.shared()}, [s](Node& self) { push(self, 0, self.grad * s); });
}

Var square(const Var& a) {
  Matrix v = a.value().array().square();
  return make(std::move(v), {a.shared()}, [](Node& self) {
    push(self, 0, 2.0 * self.grad.cwiseProduct(self.inputs[0]->value));
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    std::ostringstream os;
    os << "matmul: inner dimensions differ (" << a.rows() << "x" << a.cols() << " * " << b.rows()
       << "x" << b.cols() << ")";
    throw StructuralError(os.str());
  }
  return make(a.value() * b.value(), {a.shared(), b.shared()}, [](Node& self) {
    if (self.inputs[0]->requires_grad)
      self.inputs[0]->accumulate(self.grad * self.inputs[1]->value.transpose());
    if (self.inputs[1]->requires_grad)
      self.inputs[1]->accumulate(self.inputs[0]->value.transpose() * self.grad);
  });
}

Var transpose(const Var& a) {
  Matrix v = a.value().transpose();
  return make(std::move(v), {a.shared()},
              [](Node& self) { push(self, 0, self.grad.transpose()); });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw StructuralError("slice_cols: range outside matrix");
  }
  Matrix v = a.value().middleCols(start, count);
  const Index total = a.cols();
  return make(std::move(v), {a.shared()}, [start, count, total](Node& self) {
    Matrix g = Matrix::Zero(self.grad.rows(), total);
    g.middleCols(start, count) = self.grad;
    push(self, 0, g);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw StructuralError("concat_cols: no parts");
  const Index rows = parts.front().rows();
  Index cols = 0;
  std::vector<NodePtr> inputs;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw StructuralError("concat_cols: row counts differ");
    cols += p.cols();
    widths.push_back(p.cols());
    inputs.push_back(p.shared());
  }
  Matrix v(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make(std::move(v), std::move(inputs), [widths](Node& self) {
    Index off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (self.inputs[i]->requires_grad)
        self.inputs[i]->accumulate(self.grad.middleCols(off, widths[i]));
      off += widths[i];
    }
  });
}

Var concat_rows(const Var& top, const Var& bottom) {
  if (top.cols() != bottom.cols()) throw StructuralError("concat_rows: column counts differ");
  Matrix v(top.rows() + bottom.rows(), top.cols());
  v.topRows(top.rows()) = top.value();
  v.bottomRows(bottom.rows()) = bottom.value();
  const Index split = top.rows();
  return make(std::move(v), {top.shared(), bottom.shared()}, [split](Node& self) {
    push(self, 0, self.grad.topRows(split));
    push(self, 1, self.grad.bottomRows(self.grad.rows() - split));
  });
}

Var gather_rows(const Var& a, std::span<const int> rows) {
  std::vector<int> idx(rows.begin(), rows.end());
  Matrix v(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw StructuralError("gather_rows: index out of range");
    v.row(static_cast<Index>(i)) = a.value().row(idx[i]);
  }
  const Index src_rows = a.rows();
  return make(std::move(v), {a.shared()}, [idx = std::move(idx), src_rows](Node& self) {
    Matrix g = Matrix::Zero(src_rows, self.grad.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    push(self, 0, g);
  });
}

Var detach(const Var& a) { return constant(a.value()); }

Var sum(const Var& a) {
  return make(Matrix::Constant(1, 1, a.value().sum()), {a.shared()}, [](Node& self) {
    const auto& in = self.inputs[0]->value;
    push(self, 0, Matrix::Constant(in.rows(), in.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw StructuralError("mean of an empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var mean_rows(const Var& a) {
  if (a.rows() == 0) throw StructuralError("mean_rows of an empty matrix");
  Matrix v = a.value().colwise().mean();
  return make(std::move(v), {a.shared()}, [](Node& self) {
    const Index n = self.inputs[0]->value.rows();
    Matrix g = self.grad.replicate(n, 1) / static_cast<double>(n);
    push(self, 0, g);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Index d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw StructuralError("layer_norm: gamma/beta must be 1 x d");
  }
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), d);
  Eigen::VectorXd inv_std(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return make(std::move(out), {x.shared(), gamma.shared(), beta.shared()},
              [xhat, inv_std](Node& self) {
                const Matrix& g = self.grad;
                const auto& gam = self.inputs[1]->value;
                if (self.inputs[0]->requires_grad) {
                  Matrix dxhat = g.array().rowwise() * gam.row(0).array();
                  Matrix dx(g.rows(), g.cols());
                  for (Index r = 0; r < g.rows(); ++r) {
                    const double m1 = dxhat.row(r).mean();
                    const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                    dx.row(r) = inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                  }
                  self.inputs[0]->accumulate(dx);
                }
                if (self.inputs[1]->requires_grad)
                  self.inputs[1]->accumulate(g.cwiseProduct(xhat).colwise().sum());
                if (self.inputs[2]->requires_grad) self.inputs[2]->accumulate(g.colwise().sum());
              });
}

Var gelu(const Var& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Matrix v = x.value().unaryExpr([](double t) { return 0.5 * t * (1.0 + std::erf(t * kInvSqrt2)); });
  return make(std::move(v), {x.shared()}, [](Node& self) {
    Matrix d = self.inputs[0]->value.unaryExpr([](double t) {
      return 0.5 * (1.0 + std::erf(t * kInvSqrt2)) + t * kInvSqrt2Pi * std::exp(-0.5 * t * t);
    });
    push(self, 0, self.grad.cwiseProduct(d));
  });
}

namespace {
Matrix row_softmax(const Matrix& x) {
  Matrix s(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    s.row(r) = (x.row(r).array() - m).exp();
    s.row(r) /= s.row(r).sum();
  }
  return s;
}
}  // namespace

Var softmax_rows(const Var& x) {
  Matrix s = row_softmax(x.value());
  return make(s, {x.shared()}, [s](Node& self) {
    Matrix dx(s.rows(), s.cols());
    for (Index r = 0; r < s.rows(); ++r) {
      const double dot = self.grad.row(r).dot(s.row(r));
      dx.row(r) = s.row(r).array() * (self.grad.row(r).array() - dot);
    }
    push(self, 0, dx);
  });
}

Var log_softmax_rows(const Var& x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double m = xv.row(r).maxCoeff();
    const double lse = m + std::log((xv.row(r).array() - m).exp().sum());
    out.row(r) = xv.row(r).array() - lse;
  }
  Matrix s = out.array().exp();
  return make(std::move(out), {x.shared()}, [s = std::move(s)](Node& self) {
    Matrix dx(s.rows(), s.cols());
    for (Index r = 0; r < s.rows(); ++r) {
      dx.row(r) = self.grad.row(r) - s.row(r) * self.grad.row(r).sum();
    }
    push(self, 0, dx);
  });
}

Var l2_normalize_rows(const Var& x) {
  const Matrix& xv = x.value();
  Eigen::VectorXd norms(xv.rows());
  Matrix y(xv.rows(), xv.cols());
  for (Index r = 0; r < xv.rows(); ++r) {
    norms(r) = xv.row(r).norm();
    if (!(norms(r) > 0.0) || !std::isfinite(norms(r))) {
      std::ostringstream os;
      os << "l2 normalization undefined for row " << r << " (norm " << norms(r) << ")";
      throw NumericError(os.str());
    }
    y.row(r) = xv.row(r) / norms(r);
  }
  return make(y, {x.shared()}, [y, norms](Node& self) {
    Matrix dx(y.rows(), y.cols());
    for (Index r = 0; r < y.rows(); ++r) {
      const double dot = y.row(r).dot(self.grad.row(r));
      dx.row(r) = (self.grad.row(r) - y.row(r) * dot) / norms(r);
    }
    push(self, 0, dx);
  });
}

Var bce_with_logits_sum(const Var& logits, const Matrix& targets) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
    throw StructuralError("bce_with_logits_sum: target shape mismatch");
  }
  const Matrix& z = logits.value();
  double total = 0.0;
  for (Index i = 0; i < z.size(); ++i) {
    const double zi = z.data()[i];
    total += std::max(zi, 0.0) - zi * targets.data()[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  return make(Matrix::Constant(1, 1, total), {logits.shared()}, [targets](Node& self) {
    const Matrix& zv = self.inputs[0]->value;
    Matrix sig = zv.unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); });
    push(self, 0, (sig - targets) * self.grad(0, 0));
  });
}

}  // namespace vmae::ad
