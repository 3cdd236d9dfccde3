#pragma once

#include <vector>

#include "matchdiff/dsm.hpp"

namespace matchdiff {

/// Variance schedule over steps 1..T. Vectors are stored 0-based: beta(t-1)
/// is the value at step t. alpha_bar_at(0) is 1 by convention, which is the
/// clean end of a reverse chain.
struct DiffusionSchedule {
  int steps = 0;
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  Eigen::VectorXd alpha_bar;

  double alpha_bar_at(int t) const;
};

DiffusionSchedule linear_beta_schedule(int steps, double beta_start, double beta_end);

/// Timesteps visited by the reverse chain, ascending; the chain walks them
/// from the back and finishes at step 0.
struct TauSubsequence {
  std::vector<int> indices;
  double eta = 0.0;
};

/// Evenly spaced indices ceil(T * i / steps) for i = 1..steps.
TauSubsequence make_tau(int total_steps, int steps, double eta = 0.0);

struct DiffusedMatrix {
  MatchMatrix raw;       // sqrt(abar) * e0 + sqrt(1 - abar) * noise
  MatchMatrix squashed;  // sigmoid(raw)
};

DiffusedMatrix forward_diffuse(const MatchMatrix& e0, int t, const MatchMatrix& noise, const DiffusionSchedule& s);

enum class DdimFormula {
  standard,       // eps = (e_t - sqrt(abar_t) e0_hat) / sqrt(1 - abar_t)
  paper_literal,  // eps = (e0_hat - sqrt(abar_t) e_t) / sqrt(1 - abar_t)
};

/// sigma = eta * sqrt((1 - abar_prev) / (1 - abar_t)) * sqrt(1 - abar_t / abar_prev)
double ddim_sigma(const DiffusionSchedule& s, int t, int t_prev, double eta);

/// Noise implied by an iterate and a clean-matrix estimate.
MatchMatrix ddim_epsilon(const MatchMatrix& e_t, const MatchMatrix& e0_hat, int t, const DiffusionSchedule& s,
                         DdimFormula formula);

MatchMatrix ddim_step(const MatchMatrix& e_t, const MatchMatrix& e0_hat, int t, int t_prev, double eta,
                      const MatchMatrix& z, const DiffusionSchedule& s, DdimFormula formula = DdimFormula::standard);

}  // namespace matchdiff
