#include <doctest.h>

#include <cmath>

#include "matchdiff/denoiser.hpp"
#include "matchdiff/error.hpp"
#include "support/oracles.hpp"

using namespace matchdiff;

namespace {

DenoiserConfig toy_config(int layers = 1) {
  DenoiserConfig cfg;
  cfg.d_model = 12;
  cfg.n_layers = layers;
  cfg.procrustes_k = 8;
  return cfg;
}

PointCloud random_cloud(Index n, Rng& rng, double half = 1.0) {
  PointCloud p(n, 3);
  for (Index i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = rng.uniform(-half, half);
  return p;
}

ParameterStore toy_params(const DenoiserConfig& cfg, std::uint64_t seed) {
  ParameterStore ps;
  Rng rng(seed);
  init_denoiser_params(ps, cfg, rng);
  // Perturb the zero-initialised biases and the near-identity output layer so
  // that every path carries gradient.
  for (auto& [name, t] : ps) t.mutable_value() += 0.3 * rng.normal_matrix(t.rows(), t.cols());
  return ps;
}

/// Copy of `base` whose tensor `name` is the given handle.
ParameterStore with_param(const ParameterStore& base, const std::string& name, const Tensor& x) {
  ParameterStore out = base.snapshot();
  for (auto& [n, t] : out)
    if (n == name) t = x;
  return out;
}

Matrix mlp_ref(const Matrix& in, const ParameterStore& ps, const std::string& pre) {
  auto ln = [&](Matrix h) {
    for (Index i = 0; i < h.rows(); ++i) {
      const double mu = h.row(i).mean();
      const double var = (h.row(i).array() - mu).square().mean();
      h.row(i) = ((h.row(i).array() - mu) / std::sqrt(var + 1e-5)).matrix();
    }
    return Matrix((h.array().rowwise() * ps.at(pre + "mlp.ln_gain").value().row(0).array()).rowwise() +
                  ps.at(pre + "mlp.ln_bias").value().row(0).array());
  };
  Matrix h = (in * ps.at(pre + "mlp.w1").value()).rowwise() + ps.at(pre + "mlp.b1").value().row(0);
  h = ln(h).cwiseMax(0.0);
  h = ((h * ps.at(pre + "mlp.w2").value()).rowwise() + ps.at(pre + "mlp.b2").value().row(0)).cwiseMax(0.0);
  return (h * ps.at(pre + "mlp.w3").value()).rowwise() + ps.at(pre + "mlp.b3").value().row(0);
}

}  // namespace

TEST_CASE("config validation") {
  DenoiserConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.d_model = 64;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(rotary_encode(PointCloud::Zero(2, 3), cfg), ConfigError);
  CHECK(DenoiserConfig::paper_scale().d_model == 528);
}

TEST_CASE("rotary encoding") {
  const DenoiserConfig cfg = toy_config();
  Rng rng(1);

  const RotaryEncoding origin = rotary_encode(PointCloud::Zero(3, 3), cfg);
  const Matrix v = rng.normal_matrix(3, 12);
  CHECK(origin.apply(v) == v);

  const PointCloud p = random_cloud(6, rng);
  const RotaryEncoding enc = rotary_encode(p, cfg);
  const Matrix x = rng.normal_matrix(6, 12);
  CHECK((enc.apply(x).rowwise().norm() - x.rowwise().norm()).cwiseAbs().maxCoeff() < 1e-9);

  // <Theta(p1) v1, Theta(p2) v2> depends only on p1 - p2.
  const PointCloud shifted = p.rowwise() + Eigen::RowVector3d(0.7, -1.3, 2.1);
  const RotaryEncoding enc2 = rotary_encode(shifted, cfg);
  const Matrix y = rng.normal_matrix(6, 12);
  const Matrix gram = enc.apply(x) * enc.apply(y).transpose();
  const Matrix gram2 = enc2.apply(x) * enc2.apply(y).transpose();
  CHECK((gram - gram2).cwiseAbs().maxCoeff() < 1e-9);

  // Pair i rotates by rotary_scale * base^(-2 (i / 3) / (d / 3)) times coordinate i % 3.
  const double angle = std::atan2(enc.sin(2, 4), enc.cos(2, 4));
  const double want = std::remainder(p(2, 1) * cfg.rotary_scale * std::pow(cfg.rotary_freq_base, -2.0 / 4.0), 2 * M_PI);
  CHECK(angle == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("attention layer") {
  const DenoiserConfig cfg = toy_config();
  const ParameterStore ps = toy_params(cfg, 2);
  const std::string pre = layer_prefix(0);
  Rng rng(3);

  SUBCASE("single token") {
    const Matrix f = rng.normal_matrix(1, 12);
    const RotaryEncoding rot = rotary_encode(random_cloud(1, rng), cfg);
    const Matrix out = attention_layer(Tensor::constant(f), Tensor::constant(f), rot, rot, ps, pre).value();
    Matrix cat(1, 24);
    cat << f, f * ps.at(pre + "wv").value();
    CHECK((out - (f + mlp_ref(cat, ps, pre))).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("zero query and key weights attend uniformly") {
    ParameterStore zero = ps.snapshot();
    for (auto& [n, t] : zero)
      if (n == pre + "wq" || n == pre + "wk") t.mutable_value().setZero();
    const Matrix fs = rng.normal_matrix(3, 12);
    const Matrix fc = rng.normal_matrix(5, 12);
    const RotaryEncoding rs = rotary_encode(random_cloud(3, rng), cfg);
    const RotaryEncoding rc = rotary_encode(random_cloud(5, rng), cfg);
    const Matrix out = attention_layer(Tensor::constant(fs), Tensor::constant(fc), rs, rc, zero, pre).value();
    const Eigen::RowVectorXd mean_v = (fc * zero.at(pre + "wv").value()).colwise().mean();
    Matrix cat(3, 24);
    cat << fs, mean_v.replicate(3, 1);
    CHECK((out - (fs + mlp_ref(cat, zero, pre))).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("gradient check on 20 seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      CAPTURE(seed);
      Rng r(100 + seed);
      const ParameterStore p = toy_params(cfg, 200 + seed);
      const Matrix fs = r.normal_matrix(4, 12), fc = r.normal_matrix(4, 12);
      const RotaryEncoding rs = rotary_encode(random_cloud(4, r), cfg), rc = rotary_encode(random_cloud(4, r), cfg);
      const Tensor w = Tensor::constant(r.normal_matrix(4, 12));
      CHECK(oracle::grad_check([&](const Tensor& x) { return sum(mul(attention_layer(x, Tensor::constant(fc), rs, rc, p, pre), w)); }, fs) < 1e-4);
      CHECK(oracle::grad_check([&](const Tensor& x) { return sum(mul(attention_layer(Tensor::constant(fs), x, rs, rc, p, pre), w)); }, fc) < 1e-4);
      for (const char* name : {"wq", "wk", "wv", "mlp.w1", "mlp.ln_gain", "mlp.w3"}) {
        CAPTURE(name);
        const std::string full = pre + name;
        CHECK(oracle::grad_check(
                  [&](const Tensor& x) {
                    return sum(mul(attention_layer(Tensor::constant(fs), Tensor::constant(fc), rs, rc,
                                                   with_param(p, full, x), pre),
                                   w));
                  },
                  p.at(full).value()) < 1e-4);
      }
    }
  }

  SUBCASE("multi-head widths") {
    const Matrix fs = rng.normal_matrix(3, 12);
    const RotaryEncoding rs = rotary_encode(random_cloud(3, rng), cfg);
    CHECK(attention_layer(Tensor::constant(fs), Tensor::constant(fs), rs, rs, ps, pre, 2).value().cols() == 12);
    CHECK_THROWS_AS(attention_layer(Tensor::constant(fs), Tensor::constant(rng.normal_matrix(3, 6)), rs, rs, ps, pre),
                    DimensionError);
  }
}

TEST_CASE("f_theta") {
  Rng rng(4);
  const Matrix fp = rng.normal_matrix(5, 12), fq = rng.normal_matrix(4, 12);
  const PointCloud p = random_cloud(5, rng), q = random_cloud(4, rng);
  const DenoiserConfig cfg0 = toy_config(0);
  const RotaryEncoding rp = rotary_encode(p, cfg0), rq = rotary_encode(q, cfg0);

  const auto [a0, b0] = f_theta(Tensor::constant(fp), Tensor::constant(fq), rp, rq, ParameterStore{}, cfg0);
  CHECK(a0.value() == fp);
  CHECK(b0.value() == fq);

  const DenoiserConfig cfg = toy_config(2);
  const ParameterStore ps = toy_params(cfg, 5);
  const auto [a, b] = f_theta(Tensor::constant(fp), Tensor::constant(fq), rp, rq, ps, cfg);
  CHECK(a.rows() == 5);
  CHECK(a.cols() == 12);
  CHECK(b.rows() == 4);

  // Permuting the source points permutes the source outputs the same way.
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
  perm.indices() << 3, 0, 4, 1, 2;
  const PointCloud pp = perm * p;
  const auto [ap, bp] = f_theta(Tensor::constant(perm * fp), Tensor::constant(fq), rotary_encode(pp, cfg), rq, ps, cfg);
  CHECK((ap.value() - perm * a.value()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((bp.value() - b.value()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("matching logits") {
  const DenoiserConfig cfg = toy_config();
  Rng rng(6);

  const Matrix onehot_p = Matrix::Identity(3, 12);
  Matrix onehot_q = Matrix::Zero(2, 12);
  onehot_q(0, 1) = onehot_q(1, 5) = 1.0;
  const RotaryEncoding zp = rotary_encode(PointCloud::Zero(3, 3), cfg), zq = rotary_encode(PointCloud::Zero(2, 3), cfg);
  const Tensor eye = Tensor::constant(Matrix::Identity(12, 12));
  const Matrix l = matching_logits(Tensor::constant(onehot_p), Tensor::constant(onehot_q), zp, zq, eye, eye).value();
  CHECK((l - onehot_p * onehot_q.transpose() / std::sqrt(12.0)).cwiseAbs().maxCoeff() < 1e-15);

  const PointCloud p = random_cloud(5, rng), q = random_cloud(4, rng);
  const Matrix fp = rng.normal_matrix(5, 12), fq = rng.normal_matrix(4, 12);
  const Tensor wp = Tensor::constant(rng.normal_matrix(12, 12)), wq = Tensor::constant(rng.normal_matrix(12, 12));
  const Eigen::RowVector3d c(1.5, -0.4, 0.9);
  const Matrix base = matching_logits(Tensor::constant(fp), Tensor::constant(fq), rotary_encode(p, cfg), rotary_encode(q, cfg), wp, wq).value();
  const Matrix moved = matching_logits(Tensor::constant(fp), Tensor::constant(fq), rotary_encode(p.rowwise() + c, cfg),
                                       rotary_encode(q.rowwise() + c, cfg), wp, wq).value();
  CHECK((base - moved).cwiseAbs().maxCoeff() < 1e-9);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(300 + seed);
    const RotaryEncoding rp = rotary_encode(random_cloud(5, r), cfg), rq = rotary_encode(random_cloud(4, r), cfg);
    const Tensor w = Tensor::constant(r.normal_matrix(5, 4));
    const Matrix f0 = r.normal_matrix(5, 12);
    const Tensor fqt = Tensor::constant(r.normal_matrix(4, 12));
    CHECK(oracle::grad_check([&](const Tensor& x) { return sum(mul(matching_logits(x, fqt, rp, rq, wp, wq), w)); }, f0) < 1e-4);
    CHECK(oracle::grad_check([&](const Tensor& x) { return sum(mul(matching_logits(Tensor::constant(f0), fqt, rp, rq, x, wq), w)); },
                             wp.value()) < 1e-4);
  }
}

TEST_CASE("g_theta") {
  const DenoiserConfig cfg = toy_config();
  Rng rng(7);
  const PointCloud p = random_cloud(6, rng);
  const PointCloud q = random_cloud(6, rng);
  const Matrix fp = rng.normal_matrix(6, 12), fq = rng.normal_matrix(6, 12);

  SUBCASE("structural relaxed-DSM output for arbitrary parameters") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const ParameterStore ps = toy_params(cfg, 400 + seed);
      const MatchMatrix et = 3.0 * Rng(seed).normal_matrix(6, 6);
      const auto out = g_theta(et, p, q, Tensor::constant(fp), Tensor::constant(fq), ps, cfg);
      CHECK(is_doubly_stochastic(out.e0_hat.value(), 1e-4, Marginals::relaxed));
      CHECK((out.e0_hat.value().array() >= 0.0).all());
      CHECK((out.e0_hat.value().array() <= 1.0).all());
    }
  }

  const ParameterStore ps = toy_params(cfg, 8);
  const MatchMatrix et = rng.normal_matrix(6, 6);

  SUBCASE("deterministic") {
    const auto a = g_theta(et, p, q, Tensor::constant(fp), Tensor::constant(fq), ps, cfg);
    const auto b = g_theta(et, p, q, Tensor::constant(fp), Tensor::constant(fq), ps, cfg);
    CHECK(a.e0_hat.value() == b.e0_hat.value());
  }

  SUBCASE("joint translation invariance") {
    const Eigen::RowVector3d c(-2.0, 0.5, 3.0);
    const auto a = g_theta(et, p, q, Tensor::constant(fp), Tensor::constant(fq), ps, cfg);
    const auto b = g_theta(et, p.rowwise() + c, q.rowwise() + c, Tensor::constant(fp), Tensor::constant(fq), ps, cfg);
    CHECK((a.e0_hat.value() - b.e0_hat.value()).cwiseAbs().maxCoeff() < 1e-6);
  }

  SUBCASE("degenerate Procrustes falls back to the identity warp") {
    PointCloud line(6, 3);
    for (Index i = 0; i < 6; ++i) line.row(i) << 0.1 * i, 0.0, 0.0;
    const auto out = g_theta(et, line, line, Tensor::constant(fp), Tensor::constant(fq), ps, cfg);
    CHECK(out.degenerate);
    CHECK(out.warp.rotation == Eigen::Matrix3d::Identity());
    CHECK(out.e0_hat.value().allFinite());
  }

  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(g_theta(MatchMatrix::Zero(5, 6), p, q, Tensor::constant(fp), Tensor::constant(fq), ps, cfg),
                    DimensionError);
  }
}
