#include "matchdiff/tensor.hpp"

#include <cmath>
#include <unordered_set>

#include "matchdiff/error.hpp"

namespace matchdiff {

namespace detail {

void Node::accumulate(const Matrix& g) {
  if (!requires_grad) return;
  if (grad.size() == 0)
    grad = g;
  else
    grad += g;
}

}  // namespace detail

namespace {

std::string shape(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape(a.value()) + " vs " +
                         shape(b.value()));
}

// Row-wise log-sum-exp with max subtraction.
Eigen::VectorXd lse_rows(const Matrix& x) {
  Eigen::VectorXd out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    if (!std::isfinite(m)) {
      out(i) = m;
      continue;
    }
    out(i) = m + std::log((x.row(i).array() - m).exp().sum());
  }
  return out;
}

Matrix softmax_rows_value(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

}  // namespace

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Matrix& Tensor::grad() const {
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(rows(), cols());
  return node_->grad;
}

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw DimensionError("item: tensor is " + shape(value()));
  return value()(0, 0);
}

Matrix& Tensor::mutable_value() { return node_->value; }

Matrix& Tensor::mutable_grad() {
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(rows(), cols());
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.resize(0, 0); }

Tensor Tensor::make_op(Matrix value, std::initializer_list<Tensor> parents,
                       std::function<void(detail::Node&)> backward) {
  Tensor out(std::move(value), false);
  for (const auto& p : parents)
    if (p.requires_grad()) out.node_->requires_grad = true;
  if (out.node_->requires_grad) {
    for (const auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::move(backward);
  }
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1)
    throw DimensionError("backward: loss must be a 1x1 tensor");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order)
    if (!n->is_leaf()) n->grad.resize(0, 0);
  loss.node()->grad = Matrix::Ones(1, 1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf() || n->grad.size() == 0) continue;
    n->backward(*n);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ " + shape(a.value()) + " x " +
                         shape(b.value()));
  return Tensor::make_op(a.value() * b.value(), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * self.grad);
  });
}

Tensor transpose(const Tensor& a) {
  return Tensor::make_op(a.value().transpose(), {a}, [](detail::Node& self) {
    self.parents[0]->accumulate(self.grad.transpose());
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return Tensor::make_op(a.value() + b.value(), {a, b}, [](detail::Node& self) {
    self.parents[0]->accumulate(self.grad);
    self.parents[1]->accumulate(self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return Tensor::make_op(a.value() - b.value(), {a, b}, [](detail::Node& self) {
    self.parents[0]->accumulate(self.grad);
    self.parents[1]->accumulate(-self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return Tensor::make_op(a.value().cwiseProduct(b.value()), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(self.grad.cwiseProduct(pa.value));
  });
}

Tensor scale(const Tensor& a, double s) {
  return Tensor::make_op(a.value() * s, {a},
                         [s](detail::Node& self) { self.parents[0]->accumulate(self.grad * s); });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw DimensionError("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " +
                         shape(row.value()));
  Matrix out = a.value().rowwise() + row.value().row(0);
  return Tensor::make_op(std::move(out), {a, row}, [](detail::Node& self) {
    self.parents[0]->accumulate(self.grad);
    self.parents[1]->accumulate(self.grad.colwise().sum());
  });
}

Tensor div_scalar(const Tensor& a, const Tensor& s) {
  if (s.rows() != 1 || s.cols() != 1) throw DimensionError("div_scalar: divisor must be 1x1");
  const double d = s.value()(0, 0);
  return Tensor::make_op(a.value() / d, {a, s}, [d](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& ps = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad / d);
    if (ps.requires_grad)
      ps.accumulate(Matrix::Constant(1, 1, -self.grad.cwiseProduct(pa.value).sum() / (d * d)));
  });
}

Tensor sigmoid(const Tensor& x) {
  Matrix y = x.value().unaryExpr([](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return Tensor::make_op(y, {x}, [y](detail::Node& self) {
    self.parents[0]->accumulate(self.grad.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Tensor log_sigmoid(const Tensor& x) {
  // log sigmoid(v) = -softplus(-v)
  Matrix y = x.value().unaryExpr([](double v) {
    return v >= 0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
  });
  return Tensor::make_op(std::move(y), {x}, [](detail::Node& self) {
    const Matrix& xv = self.parents[0]->value;
    Matrix d = xv.unaryExpr([](double v) {
      // 1 - sigmoid(v)
      if (v >= 0) {
        const double e = std::exp(-v);
        return e / (1.0 + e);
      }
      return 1.0 / (1.0 + std::exp(v));
    });
    self.parents[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

Tensor relu(const Tensor& x) {
  return Tensor::make_op(x.value().cwiseMax(0.0), {x}, [](detail::Node& self) {
    const Matrix& xv = self.parents[0]->value;
    self.parents[0]->accumulate(
        (xv.array() > 0.0).select(self.grad, Matrix::Zero(xv.rows(), xv.cols())));
  });
}

Tensor exp(const Tensor& x) {
  Matrix y = x.value().array().exp().matrix();
  return Tensor::make_op(y, {x}, [y](detail::Node& self) {
    self.parents[0]->accumulate(self.grad.cwiseProduct(y));
  });
}

Tensor softmax_rows(const Tensor& x) {
  Matrix y = softmax_rows_value(x.value());
  return Tensor::make_op(y, {x}, [y](detail::Node& self) {
    const Eigen::VectorXd dot = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = self.grad.colwise() - dot;
    self.parents[0]->accumulate(y.cwiseProduct(g));
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d)
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(d));
  const Matrix& xv = x.value();
  Eigen::VectorXd inv_std(xv.rows());
  Matrix xhat(xv.rows(), d);
  for (Index i = 0; i < xv.rows(); ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu).matrix() * inv_std(i);
  }
  Matrix y = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  y.rowwise() += bias.value().row(0);
  return Tensor::make_op(std::move(y), {x, gain, bias}, [xhat, inv_std](detail::Node& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    const Matrix& g = self.grad;
    if (px.requires_grad) {
      Matrix gx = (g.array().rowwise() * pg.value.row(0).array()).matrix();
      Matrix dx(g.rows(), g.cols());
      for (Index i = 0; i < g.rows(); ++i) {
        const double m1 = gx.row(i).mean();
        const double m2 = gx.row(i).cwiseProduct(xhat.row(i)).mean();
        dx.row(i) = inv_std(i) * (gx.row(i).array() - m1 - xhat.row(i).array() * m2).matrix();
      }
      px.accumulate(dx);
    }
    if (pg.requires_grad) pg.accumulate(g.cwiseProduct(xhat).colwise().sum());
    if (pb.requires_grad) pb.accumulate(g.colwise().sum());
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows())
    throw DimensionError("concat_cols: row counts differ " + shape(a.value()) + " vs " +
                         shape(b.value()));
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Index ca = a.cols();
  const Index cb = b.cols();
  return Tensor::make_op(std::move(out), {a, b}, [ca, cb](detail::Node& self) {
    self.parents[0]->accumulate(self.grad.leftCols(ca));
    self.parents[1]->accumulate(self.grad.rightCols(cb));
  });
}

Tensor slice_cols(const Tensor& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols())
    throw DimensionError("slice_cols: range out of bounds for " + shape(x.value()));
  return Tensor::make_op(x.value().middleCols(start, count), {x}, [start, count](detail::Node& self) {
    auto& p = *self.parents[0];
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    g.middleCols(start, count) = self.grad;
    p.accumulate(g);
  });
}

Tensor crop(const Tensor& x, Index rows, Index cols) {
  if (rows > x.rows() || cols > x.cols()) throw DimensionError("crop: block exceeds " + shape(x.value()));
  return Tensor::make_op(x.value().topLeftCorner(rows, cols), {x}, [rows, cols](detail::Node& self) {
    auto& p = *self.parents[0];
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    g.topLeftCorner(rows, cols) = self.grad;
    p.accumulate(g);
  });
}

Tensor pad_slack(const Tensor& x, double fill) {
  Matrix out = Matrix::Constant(x.rows() + 1, x.cols() + 1, fill);
  out.topLeftCorner(x.rows(), x.cols()) = x.value();
  const Index r = x.rows();
  const Index c = x.cols();
  return Tensor::make_op(std::move(out), {x}, [r, c](detail::Node& self) {
    self.parents[0]->accumulate(self.grad.topLeftCorner(r, c));
  });
}

Tensor sum(const Tensor& x) {
  return Tensor::make_op(Matrix::Constant(1, 1, x.value().sum()), {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    p.accumulate(Matrix::Constant(p.value.rows(), p.value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / n);
}

Tensor row_norms(const Tensor& x) {
  Eigen::VectorXd n = x.value().rowwise().norm();
  return Tensor::make_op(n, {x}, [n](detail::Node& self) {
    auto& p = *self.parents[0];
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    for (Index i = 0; i < g.rows(); ++i)
      if (n(i) > 0) g.row(i) = (self.grad(i, 0) / n(i)) * p.value.row(i);
    p.accumulate(g);
  });
}

Tensor gather(const Tensor& x, std::span<const std::pair<Index, Index>> entries) {
  std::vector<std::pair<Index, Index>> idx(entries.begin(), entries.end());
  Matrix out(static_cast<Index>(idx.size()), 1);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto [i, j] = idx[k];
    if (i < 0 || j < 0 || i >= x.rows() || j >= x.cols())
      throw DimensionError("gather: index out of range for " + shape(x.value()));
    out(static_cast<Index>(k), 0) = x.value()(i, j);
  }
  return Tensor::make_op(std::move(out), {x}, [idx = std::move(idx)](detail::Node& self) {
    auto& p = *self.parents[0];
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) g(idx[k].first, idx[k].second) += self.grad(static_cast<Index>(k), 0);
    p.accumulate(g);
  });
}

Tensor log_normalize_rows(const Tensor& x, const Eigen::VectorXd& log_marginal) {
  if (log_marginal.size() != x.rows()) throw DimensionError("log_normalize_rows: marginal length");
  const Eigen::VectorXd lse = lse_rows(x.value());
  Matrix y = x.value().colwise() - (lse - log_marginal);
  return Tensor::make_op(std::move(y), {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    const Matrix sm = softmax_rows_value(p.value);
    const Eigen::VectorXd gs = self.grad.rowwise().sum();
    p.accumulate(self.grad - sm.cwiseProduct(gs.replicate(1, sm.cols())));
  });
}

Tensor log_normalize_cols(const Tensor& x, const Eigen::VectorXd& log_marginal) {
  if (log_marginal.size() != x.cols()) throw DimensionError("log_normalize_cols: marginal length");
  const Eigen::VectorXd lse = lse_rows(x.value().transpose());
  Matrix y = x.value().rowwise() - (lse - log_marginal).transpose();
  return Tensor::make_op(std::move(y), {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    const Matrix sm = softmax_rows_value(p.value.transpose()).transpose();
    const Eigen::RowVectorXd gs = self.grad.colwise().sum();
    p.accumulate(self.grad - sm.cwiseProduct(gs.replicate(sm.rows(), 1)));
  });
}

Tensor cap_rows_log(const Tensor& x) {
  const Eigen::VectorXd lse = lse_rows(x.value());
  const Eigen::VectorXd shift = lse.cwiseMax(0.0);
  Matrix y = x.value().colwise() - shift;
  return Tensor::make_op(std::move(y), {x}, [lse](detail::Node& self) {
    auto& p = *self.parents[0];
    Matrix g = self.grad;
    const Matrix sm = softmax_rows_value(p.value);
    for (Index i = 0; i < g.rows(); ++i)
      if (lse(i) > 0) g.row(i) -= self.grad.row(i).sum() * sm.row(i);
    p.accumulate(g);
  });
}

}  // namespace matchdiff
