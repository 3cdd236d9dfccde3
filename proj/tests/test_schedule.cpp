#include <doctest.h>

#include <cmath>

#include "matchdiff/error.hpp"
#include "matchdiff/rng.hpp"
#include "matchdiff/schedule.hpp"

using namespace matchdiff;

TEST_CASE("linear beta schedule") {
  const auto one = linear_beta_schedule(1, 0.5, 0.5);
  CHECK(one.alpha_bar.size() == 1);
  CHECK(one.alpha_bar(0) == 0.5);

  const auto s = linear_beta_schedule(1000, 1e-4, 0.02);
  CHECK(s.beta(0) == 1e-4);
  CHECK(s.beta(999) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(s.alpha_bar_at(1000) < 1e-4);
  CHECK(s.alpha_bar(0) == s.alpha(0));
  CHECK(s.alpha_bar_at(0) == 1.0);
  double prod = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    CHECK(s.alpha(t - 1) == 1.0 - s.beta(t - 1));
    prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0);
    CHECK(s.alpha_bar_at(t) == doctest::Approx(prod).epsilon(1e-12));
    if (t > 1) {
      CHECK(s.alpha_bar_at(t) == s.alpha_bar_at(t - 1) * s.alpha(t - 1));
      CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
    }
    CHECK(s.alpha_bar_at(t) > 0.0);
  }

  CHECK_THROWS_AS(linear_beta_schedule(0, 1e-4, 0.02), ConfigError);
  CHECK_THROWS_AS(linear_beta_schedule(10, 0.0, 0.02), ConfigError);
  CHECK_THROWS_AS(linear_beta_schedule(10, 0.03, 0.02), ConfigError);
  CHECK_THROWS_AS(linear_beta_schedule(10, 0.01, 1.0), ConfigError);
}

TEST_CASE("tau subsequence") {
  const auto t20 = make_tau(1000, 20);
  CHECK(t20.indices.size() == 20);
  CHECK(t20.indices.back() == 1000);
  CHECK(std::is_sorted(t20.indices.begin(), t20.indices.end()));

  const auto full = make_tau(50, 50);
  for (int i = 0; i < 50; ++i) CHECK(full.indices[static_cast<std::size_t>(i)] == i + 1);

  CHECK(make_tau(10, 3).indices == std::vector<int>{4, 7, 10});
  CHECK_THROWS_AS(make_tau(10, 11), ConfigError);
  CHECK_THROWS_AS(make_tau(10, 0), ConfigError);
}

TEST_CASE("forward diffusion") {
  const auto s = linear_beta_schedule(1000, 1e-4, 0.02);
  MatchMatrix e0 = MatchMatrix::Zero(2, 2);
  e0(0, 0) = e0(1, 1) = 1.0;

  // A schedule whose first step keeps alpha_bar at 1 - 1e-12.
  const auto clean = linear_beta_schedule(1, 1e-12, 1e-12);
  const auto d = forward_diffuse(e0, 1, MatchMatrix::Zero(2, 2), clean);
  CHECK(d.squashed(0, 1) == doctest::Approx(0.5));
  CHECK(d.squashed(0, 0) == doctest::Approx(0.7310585786).epsilon(1e-9));

  Rng rng(5);
  const MatchMatrix big_e0 = MatchMatrix::Zero(100, 100);
  const auto at_t = forward_diffuse(big_e0, 1000, rng.normal_matrix(100, 100), s);
  const double mean = at_t.raw.mean();
  const double var = (at_t.raw.array() - mean).square().mean();
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.1);

  Rng a(9), b(9);
  CHECK(forward_diffuse(e0, 300, a.normal_matrix(2, 2), s).raw == forward_diffuse(e0, 300, b.normal_matrix(2, 2), s).raw);
  CHECK_THROWS_AS(forward_diffuse(e0, 0, MatchMatrix::Zero(2, 2), s), ConfigError);
  CHECK_THROWS_AS(forward_diffuse(e0, 5, MatchMatrix::Zero(3, 2), s), DimensionError);
}

TEST_CASE("ddim step algebra") {
  const auto s = linear_beta_schedule(1000, 1e-4, 0.02);
  Rng rng(11);
  const MatchMatrix e0 = rng.normal_matrix(3, 4);
  const MatchMatrix eps = rng.normal_matrix(3, 4);

  SUBCASE("eta = 0 with the exact noise lands on the closed form") {
    for (int t : {2, 50, 700, 1000}) {
      const MatchMatrix et = std::sqrt(s.alpha_bar_at(t)) * e0 + std::sqrt(1 - s.alpha_bar_at(t)) * eps;
      const MatchMatrix next = ddim_step(et, e0, t, t - 1, 0.0, MatchMatrix::Zero(3, 4), s);
      const MatchMatrix want = std::sqrt(s.alpha_bar_at(t - 1)) * e0 + std::sqrt(1 - s.alpha_bar_at(t - 1)) * eps;
      CHECK((next - want).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((ddim_epsilon(et, e0, t, s, DdimFormula::standard) - eps).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  SUBCASE("eta = 1 gives the posterior standard deviation") {
    for (int t : {2, 10, 500, 1000}) {
      const double ab = s.alpha_bar_at(t), ab_prev = s.alpha_bar_at(t - 1);
      const double posterior_var = (1 - ab_prev) / (1 - ab) * s.beta(t - 1);
      CHECK(std::abs(ddim_sigma(s, t, t - 1, 1.0) * ddim_sigma(s, t, t - 1, 1.0) - posterior_var) < 1e-12);
    }
  }

  SUBCASE("paper_literal swaps the roles of the iterate and the estimate") {
    const int t = 400;
    const MatchMatrix et = rng.normal_matrix(3, 4);
    const MatchMatrix want = (e0 - std::sqrt(s.alpha_bar_at(t)) * et) / std::sqrt(1 - s.alpha_bar_at(t));
    CHECK((ddim_epsilon(et, e0, t, s, DdimFormula::paper_literal) - want).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("preconditions") {
    CHECK_THROWS_AS(ddim_step(e0, e0, 5, 5, 0.0, e0, s), ConfigError);
    CHECK_THROWS_AS(ddim_step(e0, e0, 5, 4, 1.5, e0, s), ConfigError);
  }
}

TEST_CASE("oracle chain recovers the clean matrix") {
  const auto s = linear_beta_schedule(1000, 1e-4, 0.02);
  Rng rng(3);
  MatchMatrix e0 = MatchMatrix::Zero(6, 6);
  for (Index i = 0; i < 6; ++i) e0(i, (i + 2) % 6) = 1.0;
  for (int steps : {1000, 20, 3}) {
    const auto tau = make_tau(1000, steps);
    MatchMatrix e = rng.normal_matrix(6, 6);
    for (std::size_t k = tau.indices.size(); k-- > 0;) {
      const int t = tau.indices[k];
      e = ddim_step(e, e0, t, k ? tau.indices[k - 1] : 0, 0.0, MatchMatrix::Zero(6, 6), s);
    }
    CHECK((e - e0).cwiseAbs().maxCoeff() < 1e-5);
  }
}
