#include "matchdiff/dsm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "matchdiff/error.hpp"

namespace matchdiff {

namespace {

struct LogMarginals {
  Eigen::VectorXd rows;
  Eigen::VectorXd cols;
};

LogMarginals log_marginals(Index n, Index m, Marginals mode) {
  LogMarginals lm;
  if (mode == Marginals::exact) {
    lm.rows = Eigen::VectorXd::Zero(n);
    lm.cols = Eigen::VectorXd::Constant(m, std::log(static_cast<double>(n) / static_cast<double>(m)));
  } else {
    lm.rows = Eigen::VectorXd::Zero(n + 1);
    lm.cols = Eigen::VectorXd::Zero(m + 1);
    lm.rows(n) = std::log(static_cast<double>(m));
    lm.cols(m) = std::log(static_cast<double>(n));
  }
  return lm;
}

void require_finite(const MatchMatrix& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string(what) + ": non-finite entries");
}

}  // namespace

Tensor sinkhorn_log(const Tensor& log_scores, int iters, Marginals mode) {
  if (iters < 1) throw ConfigError("sinkhorn: iteration count must be >= 1");
  const Index n = log_scores.rows();
  const Index m = log_scores.cols();
  if (n == 0 || m == 0) return Tensor::constant(Matrix(n, m));
  const LogMarginals lm = log_marginals(n, m, mode);
  Tensor x = mode == Marginals::relaxed ? pad_slack(log_scores, 0.0) : log_scores;
  for (int k = 0; k < iters; ++k) {
    x = log_normalize_rows(x, lm.rows);
    x = log_normalize_cols(x, lm.cols);
  }
  if (mode == Marginals::relaxed) x = cap_rows_log(crop(x, n, m));
  return exp(x);
}

MatchMatrix sinkhorn_project_log(const MatchMatrix& log_scores, int iters, Marginals mode, double tol) {
  if (iters < 1) throw ConfigError("sinkhorn: iteration count must be >= 1");
  // -inf is a legal log-score (zero entry); NaN and +inf are not.
  for (Index i = 0; i < log_scores.size(); ++i) {
    const double v = log_scores.data()[i];
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw NumericError("sinkhorn: non-finite entries");
  }
  const Index n = log_scores.rows();
  const Index m = log_scores.cols();
  if (n == 0 || m == 0) return MatchMatrix(n, m);
  const LogMarginals lm = log_marginals(n, m, mode);
  Tensor x = Tensor::constant(log_scores);
  if (mode == Marginals::relaxed) x = pad_slack(x, 0.0);
  for (int k = 0; k < iters; ++k) {
    x = log_normalize_rows(x, lm.rows);
    x = log_normalize_cols(x, lm.cols);
    if (tol > 0 && mode == Marginals::exact &&
        marginal_violation(x.value().array().exp().matrix(), Marginals::exact) < tol)
      break;
  }
  if (mode == Marginals::relaxed) x = cap_rows_log(crop(x, n, m));
  MatchMatrix out = x.value().array().exp().matrix();
  if (!out.allFinite()) throw NumericError("sinkhorn: projection diverged (a row or column has no finite score)");
  return out;
}

MatchMatrix sinkhorn_project(const MatchMatrix& scores, int iters, Marginals mode, double tol) {
  require_finite(scores, "sinkhorn");
  if ((scores.array() < 0.0).any()) throw NumericError("sinkhorn: negative scores");
  return sinkhorn_project_log(scores.array().log().matrix(), iters, mode, tol);
}

double marginal_violation(const MatchMatrix& m, Marginals mode) {
  if (m.size() == 0) return 0.0;
  const double n = static_cast<double>(m.rows());
  const double c = static_cast<double>(m.cols());
  double worst = std::max(0.0, -m.minCoeff());
  const Eigen::VectorXd rs = m.rowwise().sum();
  const Eigen::RowVectorXd cs = m.colwise().sum();
  if (mode == Marginals::exact) {
    worst = std::max(worst, (rs.array() - 1.0).abs().maxCoeff());
    worst = std::max(worst, (cs.array() - n / c).abs().maxCoeff());
  } else {
    worst = std::max(worst, (rs.array() - 1.0).maxCoeff());
    worst = std::max(worst, (cs.array() - 1.0).maxCoeff());
  }
  return worst;
}

bool is_doubly_stochastic(const MatchMatrix& m, double tol, Marginals mode) {
  if (!m.allFinite()) return false;
  return marginal_violation(m, mode) <= tol;
}

std::vector<Match> top_k_matches(const MatchMatrix& e, std::size_t k, bool mutual) {
  std::vector<Match> all;
  if (e.size() == 0 || k == 0) return all;
  if (k > static_cast<std::size_t>(e.size())) throw DimensionError("top_k_matches: k exceeds N*M");
  if (mutual) {
    std::vector<Index> row_best(static_cast<std::size_t>(e.rows()));
    std::vector<Index> col_best(static_cast<std::size_t>(e.cols()));
    for (Index i = 0; i < e.rows(); ++i) e.row(i).maxCoeff(&row_best[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < e.cols(); ++j) e.col(j).maxCoeff(&col_best[static_cast<std::size_t>(j)]);
    for (Index i = 0; i < e.rows(); ++i) {
      const Index j = row_best[static_cast<std::size_t>(i)];
      if (col_best[static_cast<std::size_t>(j)] == i) all.push_back({i, j, e(i, j)});
    }
  } else {
    all.reserve(static_cast<std::size_t>(e.size()));
    for (Index i = 0; i < e.rows(); ++i)
      for (Index j = 0; j < e.cols(); ++j) all.push_back({i, j, e(i, j)});
  }
  const auto before = [](const Match& a, const Match& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.src != b.src) return a.src < b.src;
    return a.tgt < b.tgt;
  };
  const std::size_t take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), before);
  all.resize(take);
  return all;
}

MatchMatrix round_to_permutation(const MatchMatrix& e) {
  if (e.rows() != e.cols()) throw DimensionError("round_to_permutation: matrix must be square");
  const Index n = e.rows();
  MatchMatrix out = MatchMatrix::Zero(n, n);
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  for (Index i = 0; i < n; ++i) {
    Index best = -1;
    for (Index j = 0; j < n; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      if (best < 0 || e(i, j) > e(i, best)) best = j;
    }
    used[static_cast<std::size_t>(best)] = true;
    out(i, best) = 1.0;
  }
  return out;
}

void write_matrix_csv(const std::filesystem::path& path, const MatchMatrix& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "rows,cols\n" << m.rows() << ',' << m.cols() << '\n';
  char buf[32];
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
}

MatchMatrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "rows,cols") throw DataError(path.string() + ":1: expected header 'rows,cols'");
  Index rows = 0, cols = 0;
  char comma = 0;
  if (!std::getline(in, line)) throw DataError(path.string() + ":2: missing dimensions");
  std::istringstream dims(line);
  if (!(dims >> rows >> comma >> cols) || comma != ',') throw DataError(path.string() + ":2: malformed dimensions");
  MatchMatrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw DataError(path.string() + ": missing row " + std::to_string(i));
    std::istringstream ls(line);
    for (Index j = 0; j < cols; ++j) {
      std::string cell;
      if (!std::getline(ls, cell, ',')) throw DataError(path.string() + ":" + std::to_string(i + 3) + ": short row");
      m(i, j) = std::stod(cell);
    }
  }
  return m;
}

}  // namespace matchdiff
