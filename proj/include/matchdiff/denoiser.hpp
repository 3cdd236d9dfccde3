#pragma once

// The denoising module: given a noisy matching matrix and two clouds with
// fixed per-point features, predict the clean matching matrix.
//
//   sinkhorn(sigmoid(E_t)) -> soft Procrustes -> warp source
//     -> interleaved self/cross rotary attention -> matching logits -> sinkhorn

#include <string>
#include <utility>

#include "matchdiff/dsm.hpp"
#include "matchdiff/geometry.hpp"
#include "matchdiff/params.hpp"

namespace matchdiff {

struct DenoiserConfig {
  int d_model = 66;
  int n_layers = 2;  // rounds of (self, cross)
  int n_heads = 1;
  double rotary_freq_base = 1000.0;
  double rotary_scale = 20.0;  // coordinate multiplier, rad/m at the highest frequency
  int sinkhorn_iters_inner = kInnerSinkhornIters;
  Marginals inner_marginals = Marginals::relaxed;
  int procrustes_k = 128;
  bool procrustes_mutual = false;

  /// Throws ConfigError on violated invariants.
  void validate() const;
  /// Paper-scale preset: d = 528, six interleaved layers.
  static DenoiserConfig paper_scale();
};

/// Per-point 2x2 rotations for d_model / 2 channel pairs. Pair i uses axis
/// i % 3 and frequency base^(-2 (i / 3) / (d / 3)).
struct RotaryEncoding {
  Matrix cos;  // N x d/2
  Matrix sin;  // N x d/2

  Index points() const { return cos.rows(); }
  Matrix apply(const Matrix& x) const;
  Tensor apply(const Tensor& x) const;
};

RotaryEncoding rotary_encode(const PointCloud& p, const DenoiserConfig& cfg);

/// Parameter names for attention layer `index`.
std::string layer_prefix(int index);

/// Adds all denoiser tensors to `params`.
void init_denoiser_params(ParameterStore& params, const DenoiserConfig& cfg, Rng& rng);

/// f_src + MLP(cat[f_src, softmax(q k^T / sqrt(d)) v]), with rotary q and k.
/// Self-attention passes the same tensor and encoding as source and context.
Tensor attention_layer(const Tensor& f_src, const Tensor& f_ctx, const RotaryEncoding& rot_src,
                       const RotaryEncoding& rot_ctx, const ParameterStore& params, const std::string& prefix,
                       int n_heads = 1);

/// n_layers rounds of: self on P, self on Q, then cross P<-Q and Q<-P from
/// the post-self features.
std::pair<Tensor, Tensor> f_theta(const Tensor& f_p, const Tensor& f_q, const RotaryEncoding& rot_p,
                                  const RotaryEncoding& rot_q, const ParameterStore& params,
                                  const DenoiserConfig& cfg);

/// <Theta(p_i) W_P f_i, Theta(q_j) W_Q f_j> / sqrt(d).
Tensor matching_logits(const Tensor& f_p, const Tensor& f_q, const RotaryEncoding& rot_p,
                       const RotaryEncoding& rot_q, const Tensor& w_p, const Tensor& w_q);

struct DenoiserOutput {
  Tensor e0_hat;            // projected, entries in [0, 1]
  RigidTransform warp;      // transform applied to the source cloud
  bool degenerate = false;  // Procrustes failed and the identity was used
};

/// One call of the denoising module on a raw iterate e_t.
DenoiserOutput g_theta(const MatchMatrix& e_t, const PointCloud& p, const PointCloud& q, const Tensor& f_p,
                       const Tensor& f_q, const ParameterStore& params, const DenoiserConfig& cfg);

}  // namespace matchdiff
