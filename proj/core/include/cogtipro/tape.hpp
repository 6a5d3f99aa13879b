// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cogtipro::ts {

using Matrix = Eigen::MatrixXd;

/// Reverse-mode automatic differentiation over dense matrices. Nodes are
/// appended in evaluation order; backward() walks them in reverse.
class Tape {
 public:
  using Id = int;

  /// Leaf node. Gradients are accumulated only for leaves created with
  /// `trainable` and for nodes that depend on them.
  Id leaf(Matrix value, bool trainable = false);

  const Matrix& value(Id id) const { return nodes_[id].value; }
  /// Gradient of the last backward() root with respect to `id`; zero-sized
  /// when the node does not influence the root.
  const Matrix& grad(Id id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Name attached to subsequent nodes, reported when a value turns
  /// non-finite.
  void set_scope(std::string scope) { scope_ = std::move(scope); }

  Id matmul(Id a, Id b);
  Id add(Id a, Id b);
  /// Adds a 1 x m row to every row of `a`.
  Id add_row(Id a, Id row);
  /// `a` holds groups of `pattern.rows()` rows; `pattern` is added to each.
  Id add_tiled(Id a, Id pattern);
  /// Row-wise normalization with affine 1 x m gain and bias.
  Id layernorm(Id x, Id gain, Id bias, double eps = 1e-5);
  /// Exact GELU, x * Phi(x).
  Id gelu(Id x);
  /// Elementwise product with a constant matrix (dropout masks).
  Id mul_const(Id x, const Matrix& c);
  /// Multi-head scaled dot-product attention. Rows form independent groups
  /// of `group_size` tokens; columns split into `n_heads` equal heads.
  Id attention(Id q, Id k, Id v, int group_size, int n_heads);
  /// Mean over consecutive groups of `group_size` rows.
  Id segment_mean(Id x, int group_size);
  /// Mean binary cross-entropy of an n x 1 logit column; result is 1 x 1.
  Id bce_mean(Id logits, const Eigen::VectorXd& targets);

  /// Seeds d(root)/d(root) = 1 (root must be 1 x 1) and propagates.
  void backward(Id root);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    std::function<void()> back;
  };

  Id push(Matrix value, bool needs_grad, std::function<void()> back);
  bool needs(Id id) const { return nodes_[id].needs_grad; }
  Matrix& accum(Id id);

  std::vector<Node> nodes_;
  std::string scope_;
};

/// Numerically stable softplus, log(1 + e^x).
double softplus(double x);
double sigmoid(double x);

}  // namespace cogtipro::ts
