#include "matchdiff/schedule.hpp"

#include <cmath>
#include <string>

#include "matchdiff/error.hpp"

namespace matchdiff {

double DiffusionSchedule::alpha_bar_at(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > steps) throw ConfigError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps) + "]");
  return alpha_bar(t - 1);
}

DiffusionSchedule linear_beta_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw ConfigError("schedule: require 0 < beta_start <= beta_end < 1");
  DiffusionSchedule s;
  s.steps = steps;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  double running = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double f = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    s.beta(i) = beta_start + f * (beta_end - beta_start);
    s.alpha(i) = 1.0 - s.beta(i);
    running *= s.alpha(i);
    s.alpha_bar(i) = running;
  }
  return s;
}

TauSubsequence make_tau(int total_steps, int steps, double eta) {
  if (steps < 1 || steps > total_steps)
    throw ConfigError("tau: sampling steps must lie in [1, " + std::to_string(total_steps) + "]");
  if (eta < 0.0 || eta > 1.0) throw ConfigError("tau: eta must lie in [0, 1]");
  TauSubsequence tau;
  tau.eta = eta;
  tau.indices.reserve(static_cast<std::size_t>(steps));
  for (int i = 1; i <= steps; ++i) {
    const long long num = static_cast<long long>(total_steps) * i;
    tau.indices.push_back(static_cast<int>((num + steps - 1) / steps));
  }
  return tau;
}

DiffusedMatrix forward_diffuse(const MatchMatrix& e0, int t, const MatchMatrix& noise, const DiffusionSchedule& s) {
  if (t < 1 || t > s.steps) throw ConfigError("forward_diffuse: t outside [1, T]");
  if (noise.rows() != e0.rows() || noise.cols() != e0.cols())
    throw DimensionError("forward_diffuse: noise shape differs from e0");
  const double ab = s.alpha_bar_at(t);
  DiffusedMatrix out;
  out.raw = std::sqrt(ab) * e0 + std::sqrt(1.0 - ab) * noise;
  out.squashed = sigmoid(Tensor::constant(out.raw)).value();
  return out;
}

double ddim_sigma(const DiffusionSchedule& s, int t, int t_prev, double eta) {
  const double ab_t = s.alpha_bar_at(t);
  const double ab_prev = s.alpha_bar_at(t_prev);
  return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
}

MatchMatrix ddim_epsilon(const MatchMatrix& e_t, const MatchMatrix& e0_hat, int t, const DiffusionSchedule& s,
                         DdimFormula formula) {
  const double ab = s.alpha_bar_at(t);
  const double denom = std::sqrt(1.0 - ab);
  if (formula == DdimFormula::standard) return (e_t - std::sqrt(ab) * e0_hat) / denom;
  return (e0_hat - std::sqrt(ab) * e_t) / denom;
}

MatchMatrix ddim_step(const MatchMatrix& e_t, const MatchMatrix& e0_hat, int t, int t_prev, double eta,
                      const MatchMatrix& z, const DiffusionSchedule& s, DdimFormula formula) {
  if (!(t_prev < t)) throw ConfigError("ddim_step: t_prev must be smaller than t");
  if (eta < 0.0 || eta > 1.0) throw ConfigError("ddim_step: eta must lie in [0, 1]");
  if (e0_hat.rows() != e_t.rows() || e0_hat.cols() != e_t.cols() || z.rows() != e_t.rows() ||
      z.cols() != e_t.cols())
    throw DimensionError("ddim_step: operand shapes differ");
  const double ab_prev = s.alpha_bar_at(t_prev);
  const double sigma = ddim_sigma(s, t, t_prev, eta);
  const double residual = 1.0 - ab_prev - sigma * sigma;
  // Rounding can push an exactly-zero residual slightly negative at eta = 1.
  if (residual < -1e-12) throw NumericError("ddim_step: sigma^2 exceeds 1 - alpha_bar_prev");
  const MatchMatrix eps = ddim_epsilon(e_t, e0_hat, t, s, formula);
  return std::sqrt(ab_prev) * e0_hat + std::sqrt(std::max(residual, 0.0)) * eps + sigma * z;
}

}  // namespace matchdiff
