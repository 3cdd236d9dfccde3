#include "matchdiff/denoiser.hpp"

#include <cmath>

#include "matchdiff/error.hpp"
#include "matchdiff/log.hpp"

namespace matchdiff {

void DenoiserConfig::validate() const {
  if (d_model <= 0 || d_model % 6 != 0) throw ConfigError("denoiser.d_model must be a positive multiple of 6");
  if (n_layers < 0) throw ConfigError("denoiser.n_layers must be >= 0");
  if (n_heads < 1 || d_model % n_heads != 0 || (d_model / n_heads) % 2 != 0)
    throw ConfigError("denoiser.n_heads must split d_model into even-width heads");
  if (!(rotary_freq_base > 1.0)) throw ConfigError("denoiser.rotary_freq_base must be > 1");
  if (!(rotary_scale > 0.0)) throw ConfigError("denoiser.rotary_scale must be > 0");
  if (sinkhorn_iters_inner < 1) throw ConfigError("denoiser.sinkhorn_iters_inner must be >= 1");
  if (procrustes_k < 3) throw ConfigError("denoiser.procrustes_k must be >= 3");
}

DenoiserConfig DenoiserConfig::paper_scale() {
  DenoiserConfig cfg;
  cfg.d_model = 528;
  cfg.n_layers = 3;  // three (self, cross) rounds = six interleaved layers
  return cfg;
}

RotaryEncoding rotary_encode(const PointCloud& p, const DenoiserConfig& cfg) {
  if (cfg.d_model % 6 != 0) throw ConfigError("rotary_encode: d_model must be divisible by 6");
  const Index pairs = cfg.d_model / 2;
  const double per_axis = cfg.d_model / 3.0;
  RotaryEncoding enc{Matrix(p.rows(), pairs), Matrix(p.rows(), pairs)};
  for (Index i = 0; i < pairs; ++i) {
    const double freq = cfg.rotary_scale * std::pow(cfg.rotary_freq_base, -2.0 * static_cast<double>(i / 3) / per_axis);
    const Eigen::VectorXd angle = p.col(i % 3) * freq;
    enc.cos.col(i) = angle.array().cos().matrix();
    enc.sin.col(i) = angle.array().sin().matrix();
  }
  return enc;
}

Matrix RotaryEncoding::apply(const Matrix& x) const {
  if (x.rows() != cos.rows() || x.cols() != 2 * cos.cols()) throw DimensionError("rotary apply: shape mismatch");
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < cos.cols(); ++i) {
    const auto a = x.col(2 * i).array();
    const auto b = x.col(2 * i + 1).array();
    out.col(2 * i) = (cos.col(i).array() * a - sin.col(i).array() * b).matrix();
    out.col(2 * i + 1) = (sin.col(i).array() * a + cos.col(i).array() * b).matrix();
  }
  return out;
}

Tensor RotaryEncoding::apply(const Tensor& x) const {
  Matrix y = apply(x.value());
  return Tensor::make_op(std::move(y), {x}, [c = cos, s = sin](detail::Node& self) {
    const Matrix& g = self.grad;
    Matrix out(g.rows(), g.cols());
    for (Index i = 0; i < c.cols(); ++i) {
      const auto a = g.col(2 * i).array();
      const auto b = g.col(2 * i + 1).array();
      out.col(2 * i) = (c.col(i).array() * a + s.col(i).array() * b).matrix();
      out.col(2 * i + 1) = (c.col(i).array() * b - s.col(i).array() * a).matrix();
    }
    self.parents[0]->accumulate(out);
  });
}

std::string layer_prefix(int index) { return "denoiser.layer" + std::to_string(index) + "."; }

void init_denoiser_params(ParameterStore& params, const DenoiserConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index d = cfg.d_model;
  for (int l = 0; l < 2 * cfg.n_layers; ++l) {
    const std::string pre = layer_prefix(l);
    params.add(pre + "wq", glorot(d, d, rng));
    params.add(pre + "wk", glorot(d, d, rng));
    params.add(pre + "wv", glorot(d, d, rng));
    params.add(pre + "mlp.w1", glorot(2 * d, 2 * d, rng));
    params.add(pre + "mlp.b1", Matrix::Zero(1, 2 * d));
    params.add(pre + "mlp.ln_gain", Matrix::Ones(1, 2 * d));
    params.add(pre + "mlp.ln_bias", Matrix::Zero(1, 2 * d));
    params.add(pre + "mlp.w2", glorot(2 * d, d, rng));
    params.add(pre + "mlp.b2", Matrix::Zero(1, d));
    // Small output layer: each block starts close to the identity map.
    params.add(pre + "mlp.w3", 0.1 * glorot(d, d, rng));
    params.add(pre + "mlp.b3", Matrix::Zero(1, d));
  }
  params.add("denoiser.match.wp", glorot(d, d, rng));
  params.add("denoiser.match.wq", glorot(d, d, rng));
}

namespace {

Tensor linear(const Tensor& x, const ParameterStore& params, const std::string& w, const std::string& b) {
  return add_row(matmul(x, params.at(w)), params.at(b));
}

}  // namespace

Tensor attention_layer(const Tensor& f_src, const Tensor& f_ctx, const RotaryEncoding& rot_src,
                       const RotaryEncoding& rot_ctx, const ParameterStore& params, const std::string& prefix,
                       int n_heads) {
  const Index d = f_src.cols();
  if (f_ctx.cols() != d) throw DimensionError("attention_layer: source and context widths differ");
  if (rot_src.points() != f_src.rows() || rot_ctx.points() != f_ctx.rows())
    throw DimensionError("attention_layer: rotary encoding does not match point count");
  if (n_heads < 1 || d % n_heads != 0) throw ConfigError("attention_layer: d_model not divisible by n_heads");

  const Tensor q = rot_src.apply(matmul(f_src, params.at(prefix + "wq")));
  const Tensor k = rot_ctx.apply(matmul(f_ctx, params.at(prefix + "wk")));
  const Tensor v = matmul(f_ctx, params.at(prefix + "wv"));

  const Index dh = d / n_heads;
  Tensor message;
  for (int h = 0; h < n_heads; ++h) {
    const Tensor qh = n_heads == 1 ? q : slice_cols(q, h * dh, dh);
    const Tensor kh = n_heads == 1 ? k : slice_cols(k, h * dh, dh);
    const Tensor vh = n_heads == 1 ? v : slice_cols(v, h * dh, dh);
    const Tensor attn = softmax_rows(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh))));
    const Tensor mh = matmul(attn, vh);
    message = h == 0 ? mh : concat_cols(message, mh);
  }

  Tensor hidden = linear(concat_cols(f_src, message), params, prefix + "mlp.w1", prefix + "mlp.b1");
  hidden = relu(layer_norm(hidden, params.at(prefix + "mlp.ln_gain"), params.at(prefix + "mlp.ln_bias")));
  hidden = relu(linear(hidden, params, prefix + "mlp.w2", prefix + "mlp.b2"));
  hidden = linear(hidden, params, prefix + "mlp.w3", prefix + "mlp.b3");
  return add(f_src, hidden);
}

std::pair<Tensor, Tensor> f_theta(const Tensor& f_p, const Tensor& f_q, const RotaryEncoding& rot_p,
                                  const RotaryEncoding& rot_q, const ParameterStore& params,
                                  const DenoiserConfig& cfg) {
  Tensor fp = f_p;
  Tensor fq = f_q;
  for (int round = 0; round < cfg.n_layers; ++round) {
    const std::string self_prefix = layer_prefix(2 * round);
    const std::string cross_prefix = layer_prefix(2 * round + 1);
    fp = attention_layer(fp, fp, rot_p, rot_p, params, self_prefix, cfg.n_heads);
    fq = attention_layer(fq, fq, rot_q, rot_q, params, self_prefix, cfg.n_heads);
    Tensor fp_next = attention_layer(fp, fq, rot_p, rot_q, params, cross_prefix, cfg.n_heads);
    Tensor fq_next = attention_layer(fq, fp, rot_q, rot_p, params, cross_prefix, cfg.n_heads);
    fp = std::move(fp_next);
    fq = std::move(fq_next);
  }
  return {fp, fq};
}

Tensor matching_logits(const Tensor& f_p, const Tensor& f_q, const RotaryEncoding& rot_p,
                       const RotaryEncoding& rot_q, const Tensor& w_p, const Tensor& w_q) {
  if (f_p.cols() != f_q.cols()) throw DimensionError("matching_logits: feature widths differ");
  const Tensor a = rot_p.apply(matmul(f_p, w_p));
  const Tensor b = rot_q.apply(matmul(f_q, w_q));
  return scale(matmul(a, transpose(b)), 1.0 / std::sqrt(static_cast<double>(f_p.cols())));
}

DenoiserOutput g_theta(const MatchMatrix& e_t, const PointCloud& p, const PointCloud& q, const Tensor& f_p,
                       const Tensor& f_q, const ParameterStore& params, const DenoiserConfig& cfg) {
  if (e_t.rows() != p.rows() || e_t.cols() != q.rows())
    throw DimensionError("g_theta: iterate is " + std::to_string(e_t.rows()) + "x" + std::to_string(e_t.cols()) +
                         " but clouds have " + std::to_string(p.rows()) + " and " + std::to_string(q.rows()) +
                         " points");
  DenoiserOutput out;

  // sigmoid squashes the raw iterate; log-sigmoid keeps it in the log domain.
  const MatchMatrix log_scores = log_sigmoid(Tensor::constant(e_t)).value();
  const MatchMatrix projected = sinkhorn_project_log(log_scores, cfg.sinkhorn_iters_inner, cfg.inner_marginals);
  try {
    out.warp = soft_procrustes(projected, p, q, static_cast<std::size_t>(cfg.procrustes_k), cfg.procrustes_mutual);
  } catch (const DegenerateError& e) {
    log_warning(std::string("g_theta: ") + e.what() + "; using identity warp");
    out.warp = RigidTransform::identity();
    out.degenerate = true;
  }

  const PointCloud warped = rigid_warp(p, out.warp);
  const RotaryEncoding rot_p = rotary_encode(warped, cfg);
  const RotaryEncoding rot_q = rotary_encode(q, cfg);
  const auto [fp, fq] = f_theta(f_p, f_q, rot_p, rot_q, params, cfg);
  const Tensor logits = matching_logits(fp, fq, rot_p, rot_q, params.at("denoiser.match.wp"),
                                        params.at("denoiser.match.wq"));
  out.e0_hat = sinkhorn_log(logits, cfg.sinkhorn_iters_inner, cfg.inner_marginals);
  return out;
}

}  // namespace matchdiff
