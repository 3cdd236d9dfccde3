#pragma once

// Reverse-mode differentiation over dense 64-bit matrices.
//
// A Tensor is a handle to a node in a computation graph. Every op records its
// parents and a backward closure; backward() walks the graph in reverse
// topological order. Leaf tensors (parameters) accumulate gradients across
// calls until zero_grad(); interior gradients are reset at the start of each
// backward pass. The graph is released when the last handle to the loss
// goes away.
//
// Broadcasting is limited to adding a 1xM row vector to every row of an NxM
// matrix (add_row). Everything else requires matching shapes.

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace matchdiff {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  void accumulate(const Matrix& g);
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor constant(Matrix value) { return Tensor(std::move(value), false); }
  static Tensor parameter(Matrix value) { return Tensor(std::move(value), true); }
  static Tensor scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix& value() const { return node_->value; }
  /// Gradient buffer; zero matrix of the value's shape if nothing was accumulated.
  const Matrix& grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const;

  /// Direct access for optimizers; only valid on leaves.
  Matrix& mutable_value();
  Matrix& mutable_grad();
  void zero_grad();

  /// Same value, no history.
  Tensor detach() const { return constant(value()); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds an op result. `backward` receives the result node, whose grad
  /// holds the upstream gradient, and pushes contributions into parents.
  static Tensor make_op(Matrix value, std::initializer_list<Tensor> parents,
                        std::function<void(detail::Node&)> backward);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Propagates d(loss)/d(leaf) into every reachable leaf. `loss` must be 1x1.
/// Calling twice without zero_grad() doubles the leaf gradients.
void backward(const Tensor& loss);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// Adds the 1xM `row` to every row of the NxM `a`.
Tensor add_row(const Tensor& a, const Tensor& row);
/// Divides every entry by the 1x1 tensor `s`.
Tensor div_scalar(const Tensor& a, const Tensor& s);

Tensor sigmoid(const Tensor& x);
Tensor log_sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);

Tensor softmax_rows(const Tensor& x);
/// Per-row normalisation with learned 1xD gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& x, Index start, Index count);
/// Top-left rows x cols block.
Tensor crop(const Tensor& x, Index rows, Index cols);
/// Appends one row and one column filled with `fill`.
Tensor pad_slack(const Tensor& x, double fill = 0.0);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Nx1 Euclidean norms of the rows.
Tensor row_norms(const Tensor& x);
/// Kx1 column of x(i_k, j_k).
Tensor gather(const Tensor& x, std::span<const std::pair<Index, Index>> entries);

/// y_ij = x_ij - logsumexp_k(x_ik) + log_marginal_i.
Tensor log_normalize_rows(const Tensor& x, const Eigen::VectorXd& log_marginal);
/// y_ij = x_ij - logsumexp_k(x_kj) + log_marginal_j.
Tensor log_normalize_cols(const Tensor& x, const Eigen::VectorXd& log_marginal);
/// Scales down rows whose exp-sum exceeds one: y = x - max(0, logsumexp_row(x)).
Tensor cap_rows_log(const Tensor& x);

}  // namespace matchdiff
