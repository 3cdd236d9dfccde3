#pragma once

// Projections onto the (relaxed) doubly-stochastic matrix space.
//
// Exact mode normalises an N x M matrix to row sums 1 and column sums N/M
// (the Birkhoff polytope when square). Relaxed mode appends one slack row and
// one slack column holding a zero logit, with marginals M and N respectively,
// so real rows and columns may leave mass unmatched; after stripping the
// slack, rows are capped so every row and column sums to at most one.
//
// All projections run in the log domain with alternating row/column
// log-sum-exp normalisation, ending on a column step.

#include <filesystem>
#include <vector>

#include "matchdiff/tensor.hpp"

namespace matchdiff {

/// Matching matrix E: rows index source points, columns target points.
using MatchMatrix = Eigen::MatrixXd;

enum class Marginals { exact, relaxed };

inline constexpr int kInnerSinkhornIters = 5;
inline constexpr int kFinalSinkhornIters = 30;

/// Differentiable projection of log-scores; returns probabilities.
Tensor sinkhorn_log(const Tensor& log_scores, int iters, Marginals mode);

/// Projection of non-negative scores. Stops early once every marginal is
/// within `tol` (`tol <= 0` runs all iterations).
MatchMatrix sinkhorn_project(const MatchMatrix& scores, int iters, Marginals mode, double tol = 0.0);

/// Same as sinkhorn_project but the input is already in the log domain.
MatchMatrix sinkhorn_project_log(const MatchMatrix& log_scores, int iters, Marginals mode, double tol = 0.0);

/// Largest violation of the mode's marginal constraints (0 when satisfied).
double marginal_violation(const MatchMatrix& m, Marginals mode);

bool is_doubly_stochastic(const MatchMatrix& m, double tol, Marginals mode);

struct Match {
  Index src = 0;
  Index tgt = 0;
  double score = 0.0;

  friend bool operator==(const Match&, const Match&) = default;
};

/// The k highest entries, by descending score then ascending (i, j). With
/// `mutual`, only pairs that are both their row's and column's argmax
/// (lowest index wins ties) are eligible.
std::vector<Match> top_k_matches(const MatchMatrix& e, std::size_t k, bool mutual);

/// Greedy 0/1 rounding: rows in order take their best still-free column.
MatchMatrix round_to_permutation(const MatchMatrix& e);

/// Debug dump: header line "rows,cols", then one comma-separated line per row.
void write_matrix_csv(const std::filesystem::path& path, const MatchMatrix& m);
MatchMatrix read_matrix_csv(const std::filesystem::path& path);

}  // namespace matchdiff
