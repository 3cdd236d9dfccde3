#include "matchdiff/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <string>
#include <thread>

#include "matchdiff/error.hpp"
#include "matchdiff/log.hpp"

namespace matchdiff {

namespace {

EncodedCloud encode_with(const PointCloud& cloud, const ParameterStore& params, const EncoderConfig& cfg) {
  EncodedCloud sk = cfg.voxel_size > 0.0 ? voxel_subsample(cloud, cfg.voxel_size) : identity_skeleton(cloud);
  return encode_features(std::move(sk), params, cfg);
}

// The clouds live in unrelated frames before any warp is known, so the
// backbone head matches on features alone: a zero-angle rotary encoding.
RotaryEncoding no_rotation(Index n, const DenoiserConfig& cfg) {
  return rotary_encode(PointCloud::Zero(n, 3), cfg);
}

Tensor backbone_logits(const EncodedCloud& p, const EncodedCloud& q, const ParameterStore& params,
                       const DenoiserConfig& cfg) {
  return initial_matching(p.features, q.features, no_rotation(p.superpoints.rows(), cfg),
                          no_rotation(q.superpoints.rows(), cfg), params);
}

std::vector<std::pair<Index, Index>> nonzero_entries(const MatchMatrix& m) {
  std::vector<std::pair<Index, Index>> out;
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      if (m(i, j) > 0.5) out.emplace_back(i, j);
  return out;
}

// Surrogate warping loss: mean residual |R p_i + t - q_j| over ground-truth
// pairs, where (R, t) is the soft Procrustes fit on the top-k entries of the
// prediction. R is treated as constant; t = q_bar - R p_bar carries the
// gradient through the weighted centroids.
std::optional<Tensor> warping_loss(const Tensor& e0_hat, const PointCloud& p, const PointCloud& q,
                                   const std::vector<std::pair<Index, Index>>& gt, const DenoiserConfig& cfg) {
  const MatchMatrix& e = e0_hat.value();
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(cfg.procrustes_k), static_cast<std::size_t>(e.size()));
  RigidTransform rt;
  try {
    rt = soft_procrustes(e, p, q, k, cfg.procrustes_mutual);
  } catch (const DegenerateError&) {
    return std::nullopt;
  }
  const auto matches = top_k_matches(e, k, cfg.procrustes_mutual);
  std::vector<std::pair<Index, Index>> entries;
  Matrix ps(static_cast<Index>(matches.size()), 3);
  Matrix qs(static_cast<Index>(matches.size()), 3);
  for (std::size_t n = 0; n < matches.size(); ++n) {
    entries.emplace_back(matches[n].src, matches[n].tgt);
    ps.row(static_cast<Index>(n)) = p.row(matches[n].src);
    qs.row(static_cast<Index>(n)) = q.row(matches[n].tgt);
  }
  const Tensor w = gather(e0_hat, entries);
  const Tensor wn = transpose(div_scalar(w, sum(w)));
  const Tensor rt_t = Tensor::constant(rt.rotation.transpose());
  const Tensor t = sub(matmul(wn, Tensor::constant(qs)), matmul(matmul(wn, Tensor::constant(ps)), rt_t));

  Matrix base(static_cast<Index>(gt.size()), 3);
  for (std::size_t n = 0; n < gt.size(); ++n)
    base.row(static_cast<Index>(n)) = p.row(gt[n].first) * rt.rotation.transpose() - q.row(gt[n].second);
  return mean(row_norms(add_row(Tensor::constant(base), t)));
}

}  // namespace

Model init_model(const DenoiserConfig& denoiser, const EncoderConfig& encoder, std::uint64_t seed) {
  denoiser.validate();
  encoder.validate();
  if (encoder.d_model != denoiser.d_model)
    throw ConfigError("encoder.d_model (" + std::to_string(encoder.d_model) + ") must equal denoiser.d_model (" +
                      std::to_string(denoiser.d_model) + ")");
  Model m{denoiser, encoder, {}};
  Rng rng(seed);
  Rng enc_rng = rng.fork(0);
  Rng den_rng = rng.fork(1);
  init_encoder_params(m.params, encoder, enc_rng);
  init_denoiser_params(m.params, denoiser, den_rng);
  return m;
}

EncodedCloud encode_cloud(const PointCloud& cloud, const Model& model) {
  return encode_with(cloud, model.params, model.encoder);
}

MatchMatrix superpoint_targets(const ScenePair& pair, const EncodedCloud& p, const EncodedCloud& q) {
  const bool same_p = p.superpoints.rows() == pair.src.rows() && p.superpoints == pair.src;
  const bool same_q = q.superpoints.rows() == pair.tgt.rows() && q.superpoints == pair.tgt;
  if (same_p && same_q && pair.gt_matrix.size() != 0) return pair.gt_matrix;
  PointCloud warped(p.superpoints.rows(), 3);
  for (Index i = 0; i < warped.rows(); ++i) warped.row(i) = pair.warp_point(p.superpoints.row(i).transpose()).transpose();
  MatchMatrix m = MatchMatrix::Zero(p.superpoints.rows(), q.superpoints.rows());
  for (const auto& [i, j] : mutual_nearest_pairs(warped, q.superpoints, pair.sigma)) m(i, j) = 1.0;
  return m;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train.adam_betas must lie in [0, 1)");
  if (focal_gamma < 0.0) throw ConfigError("train.focal_gamma must be >= 0");
  if (!(focal_alpha >= 0.0 && focal_alpha <= 1.0)) throw ConfigError("train.focal_alpha must lie in [0, 1]");
  if (focal_pos_weight < 0.0) throw ConfigError("train.focal_pos_weight must be >= 0");
  if (loss_weights.matching < 0.0 || loss_weights.warping < 0.0 || loss_weights.simple < 0.0)
    throw ConfigError("train.loss_weights must be >= 0");
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
}

Tensor focal_loss(const Tensor& pred, const MatchMatrix& target, double gamma, double alpha, double pos_weight) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw DimensionError("focal_loss: prediction and target shapes differ");
  constexpr double lo = 1e-7;
  constexpr double hi = 1.0 - 1e-7;
  const Matrix& x = pred.value();
  const double a_pos = alpha * pos_weight;
  const double a_neg = 1.0 - alpha;
  const double n = static_cast<double>(x.size());
  double total = 0.0;
  Matrix dldp(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = 0; i < x.rows(); ++i) {
      const double p = std::clamp(x(i, j), lo, hi);
      const double y = target(i, j);
      const double lp = std::log(p);
      const double lq = std::log1p(-p);
      const double pos = -a_pos * std::pow(1.0 - p, gamma) * lp;
      const double neg = -a_neg * std::pow(p, gamma) * lq;
      total += y * pos + (1.0 - y) * neg;
      double dpos = -a_pos * std::pow(1.0 - p, gamma) / p;
      double dneg = a_neg * std::pow(p, gamma) / (1.0 - p);
      if (gamma != 0.0) {
        dpos += a_pos * gamma * std::pow(1.0 - p, gamma - 1.0) * lp;
        dneg -= a_neg * gamma * std::pow(p, gamma - 1.0) * lq;
      }
      const bool inside = x(i, j) > lo && x(i, j) < hi;
      dldp(i, j) = inside ? (y * dpos + (1.0 - y) * dneg) / n : 0.0;
    }
  }
  return Tensor::make_op(Matrix::Constant(1, 1, total / n), {pred}, [dldp = std::move(dldp)](detail::Node& self) {
    self.parents[0]->accumulate(dldp * self.grad(0, 0));
  });
}

double timestep_weight(int t, int total_steps) {
  if (total_steps < 1 || t < 1 || t > total_steps) throw ConfigError("timestep_weight: t outside 1..T");
  return static_cast<double>(total_steps - t + 1) / static_cast<double>(total_steps);
}

LossTerms pair_loss(const ScenePair& pair, const Model& model, const ParameterStore& params,
                    const DiffusionSchedule& s, const TrainConfig& cfg, Rng& rng) {
  const EncodedCloud p = encode_with(pair.src, params, model.encoder);
  const EncodedCloud q = encode_with(pair.tgt, params, model.encoder);
  const MatchMatrix e0 = superpoint_targets(pair, p, q);
  const auto gt = nonzero_entries(e0);

  double pos_weight = cfg.focal_pos_weight;
  if (pos_weight == 0.0)
    pos_weight = gt.empty() ? 1.0 : static_cast<double>(e0.size() - static_cast<Index>(gt.size())) / static_cast<double>(gt.size());

  LossTerms terms;
  terms.t = rng.uniform_int(1, s.steps);
  terms.weight = timestep_weight(terms.t, s.steps);
  const MatchMatrix noise = rng.normal_matrix(e0.rows(), e0.cols());
  const MatchMatrix clean = cfg.symmetric_targets ? MatchMatrix((2.0 * e0.array() - 1.0).matrix()) : e0;
  const DiffusedMatrix diffused = forward_diffuse(clean, terms.t, noise, s);

  const DenoiserOutput out =
      g_theta(diffused.raw, p.superpoints, q.superpoints, p.features, q.features, params, model.denoiser);
  const Tensor l_simple = focal_loss(out.e0_hat, e0, cfg.focal_gamma, cfg.focal_alpha, pos_weight);

  const Tensor init = sinkhorn_log(backbone_logits(p, q, params, model.denoiser), model.denoiser.sinkhorn_iters_inner,
                                   model.denoiser.inner_marginals);
  const Tensor l_m = focal_loss(init, e0, cfg.focal_gamma, cfg.focal_alpha, pos_weight);

  Tensor total =
      add(scale(l_simple, terms.weight * cfg.loss_weights.simple), scale(l_m, cfg.loss_weights.matching));
  std::optional<Tensor> l_w;
  if (gt.empty()) {
    log_warning("pair " + pair.name + ": no ground-truth correspondences; skipping warping loss");
  } else if (cfg.loss_weights.warping > 0.0) {
    l_w = warping_loss(out.e0_hat, p.superpoints, q.superpoints, gt, model.denoiser);
  }
  if (l_w) {
    total = add(total, scale(*l_w, cfg.loss_weights.warping));
    terms.warping = l_w->item();
  } else {
    terms.warping_skipped = true;
  }

  terms.simple = l_simple.item();
  terms.matching = l_m.item();
  terms.total = total.item();
  if (!std::isfinite(terms.total)) throw NumericError("pair " + pair.name + ": non-finite training loss");
  backward(total);
  return terms;
}

namespace {

std::vector<std::string> frozen(const TrainConfig& cfg) {
  if (cfg.freeze_encoder) return {"encoder."};
  return {};
}

void clip_gradients(ParameterStore& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& [_, t] : params)
    if (t.node()->grad.size() != 0) sq += t.node()->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) params.scale_grads(max_norm / norm);
}

AdamOptions adam_options(const TrainConfig& cfg) {
  AdamOptions o;
  o.learning_rate = cfg.learning_rate;
  o.beta1 = cfg.beta1;
  o.beta2 = cfg.beta2;
  return o;
}

}  // namespace

LossTerms train_step(const ScenePair& pair, Model& model, AdamState& adam, const DiffusionSchedule& s,
                     const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  model.params.zero_grad();
  const LossTerms terms = pair_loss(pair, model, model.params, s, cfg, rng);
  clip_gradients(model.params, cfg.grad_clip);
  adam_update(model.params, adam, adam_options(cfg), frozen(cfg));
  return terms;
}

std::vector<LossRecord> train_model(Model& model, std::span<const ScenePair> pairs, const DiffusionSchedule& s,
                                    const TrainConfig& cfg, int threads, const TrainProgress& progress) {
  cfg.validate();
  if (pairs.empty()) throw DataError("train_model: no training pairs");
  const Rng root(cfg.seed);
  AdamState adam;
  const AdamOptions opts = adam_options(cfg);
  std::vector<LossRecord> curve;
  std::vector<std::size_t> order(pairs.size());
  int step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle = root.fork(0x5348554646000000ULL + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<int>(i) - 1))]);

    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count = std::min(order.size() - begin, static_cast<std::size_t>(cfg.batch_size));
      std::vector<ParameterStore> grads(count);
      std::vector<LossTerms> terms(count);
      parallel_for(count, threads, [&](std::size_t k) {
        grads[k] = model.params.snapshot();
        Rng rng = root.fork((static_cast<std::uint64_t>(epoch) << 32) | (begin + k));
        terms[k] = pair_loss(pairs[order[begin + k]], model, grads[k], s, cfg, rng);
      });

      model.params.zero_grad();
      LossRecord rec{step, epoch, 0.0, 0.0, 0.0, 0.0};
      for (std::size_t k = 0; k < count; ++k) {
        model.params.accumulate_grads(grads[k]);
        rec.total += terms[k].total;
        rec.simple += terms[k].simple;
        rec.matching += terms[k].matching;
        rec.warping += terms[k].warping;
      }
      const double inv = 1.0 / static_cast<double>(count);
      model.params.scale_grads(inv);
      clip_gradients(model.params, cfg.grad_clip);
      adam_update(model.params, adam, opts, frozen(cfg));
      rec.total *= inv;
      rec.simple *= inv;
      rec.matching *= inv;
      rec.warping *= inv;
      curve.push_back(rec);
      if (progress) progress(rec);
      ++step;
    }
  }
  return curve;
}

void write_loss_curve(const std::filesystem::path& path, std::span<const LossRecord> curve) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "step,epoch,total,simple,matching,warping\n";
  char buf[160];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g\n", r.step, r.epoch, r.total, r.simple, r.matching,
                  r.warping);
    out << buf;
  }
}

// ---------------------------------------------------------------------------

void SampleConfig::validate() const {
  if (steps < 1) throw ConfigError("sample.steps must be >= 1");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("sample.eta must lie in [0, 1]");
  if (top_k < 1) throw ConfigError("sample.top_k must be >= 1");
  for (double r : refine_thresholds)
    if (!(r > 0.0)) throw ConfigError("sample.refine_thresholds must be positive");
  if (refine_passes < 1) throw ConfigError("sample.refine_passes must be >= 1");
}

MatchMatrix run_reverse_chain(MatchMatrix e, const DenoiseFn& denoise, const DiffusionSchedule& s,
                              const TauSubsequence& tau, DdimFormula formula, Rng& rng,
                              std::vector<MatchMatrix>* trace) {
  if (tau.indices.empty()) throw ConfigError("run_reverse_chain: empty tau subsequence");
  MatchMatrix e0_hat;
  for (std::size_t k = tau.indices.size(); k-- > 0;) {
    const int t = tau.indices[k];
    const int t_prev = k > 0 ? tau.indices[k - 1] : 0;
    e0_hat = denoise(e, t);
    if (trace) trace->push_back(e0_hat);
    // No fresh noise on the final step.
    const MatchMatrix z = (tau.eta > 0.0 && t_prev > 0) ? rng.normal_matrix(e.rows(), e.cols())
                                                         : MatchMatrix::Zero(e.rows(), e.cols());
    e = ddim_step(e, e0_hat, t, t_prev, tau.eta, z, s, formula);
  }
  return e0_hat;
}

MatchMatrix initial_iterate(const EncodedCloud& p, const EncodedCloud& q, const Model& model, InitMode mode, Rng& rng) {
  const Index n = p.superpoints.rows();
  const Index m = q.superpoints.rows();
  if (mode == InitMode::gaussian) return rng.normal_matrix(n, m);
  MatchMatrix logits = backbone_logits(p, q, model.params, model.denoiser).value();
  const double mu = logits.mean();
  const double var = (logits.array() - mu).square().mean();
  const double sd = std::sqrt(var);
  logits.array() -= mu;
  if (sd > 1e-12) logits /= sd;
  return logits;
}

SampleResult reverse_sample(const EncodedCloud& p, const EncodedCloud& q, const Model& model,
                            const DiffusionSchedule& s, const SampleConfig& cfg, Rng& rng,
                            std::vector<MatchMatrix>* trace) {
  cfg.validate();
  const TauSubsequence tau = make_tau(s.steps, cfg.steps, cfg.eta);
  SampleResult res;
  const Tensor fp = p.features.detach();
  const Tensor fq = q.features.detach();
  const DenoiseFn denoise = [&](const MatchMatrix& e_t, int) {
    DenoiserOutput out = g_theta(e_t, p.superpoints, q.superpoints, fp, fq, model.params, model.denoiser);
    if (out.degenerate) ++res.degenerate_steps;
    return out.e0_hat.value();
  };
  res.e0_hat = run_reverse_chain(initial_iterate(p, q, model, cfg.init_mode, rng), denoise, s, tau, cfg.formula, rng,
                                 trace);

  const auto size = static_cast<std::size_t>(res.e0_hat.size());
  try {
    res.transform = soft_procrustes(res.e0_hat, p.superpoints, q.superpoints,
                                    std::min<std::size_t>(static_cast<std::size_t>(model.denoiser.procrustes_k), size),
                                    model.denoiser.procrustes_mutual);
  } catch (const DegenerateError& e) {
    log_warning(std::string("reverse_sample: ") + e.what() + "; reporting identity transform");
    res.transform = RigidTransform::identity();
  }
  res.correspondences = top_k_matches(res.e0_hat, std::min<std::size_t>(static_cast<std::size_t>(cfg.top_k), size),
                                      cfg.mutual);
  res.registration = trimmed_refine(p.superpoints, q.superpoints, res.correspondences, res.transform,
                                    cfg.refine_thresholds, cfg.refine_passes);
  for (auto& c : res.correspondences) {
    c.src = p.origin_indices[static_cast<std::size_t>(c.src)];
    c.tgt = q.origin_indices[static_cast<std::size_t>(c.tgt)];
  }
  return res;
}

std::vector<SampleResult> sample_pairs(std::span<const ScenePair> pairs, const Model& model,
                                       const DiffusionSchedule& s, const SampleConfig& cfg, std::uint64_t seed,
                                       int threads) {
  cfg.validate();
  std::vector<SampleResult> out(pairs.size());
  const Rng root(seed);
  parallel_for(pairs.size(), threads, [&](std::size_t k) {
    const EncodedCloud p = encode_cloud(pairs[k].src, model);
    const EncodedCloud q = encode_cloud(pairs[k].tgt, model);
    Rng rng = root.fork(k);
    out[k] = reverse_sample(p, q, model, s, cfg, rng);
  });
  return out;
}

int default_threads() {
  if (const char* env = std::getenv("MATCHDIFF_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1 || v > 1024) throw ConfigError(std::string("MATCHDIFF_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<int>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace matchdiff
