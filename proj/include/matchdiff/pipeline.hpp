#pragma once

// Training (diffusion focal loss plus backbone surrogates) and reverse
// sampling over the matching-matrix iterate.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "matchdiff/data.hpp"
#include "matchdiff/encoder.hpp"
#include "matchdiff/schedule.hpp"

namespace matchdiff {

struct Model {
  DenoiserConfig denoiser;
  EncoderConfig encoder;
  ParameterStore params;
};

/// Fresh encoder and denoiser parameters drawn from `seed`.
Model init_model(const DenoiserConfig& denoiser, const EncoderConfig& encoder, std::uint64_t seed);

/// Superpoints of a cloud with features from the model's encoder.
EncodedCloud encode_cloud(const PointCloud& cloud, const Model& model);

/// Ground-truth matrix on the superpoints. Equals pair.gt_matrix when the
/// superpoints are the input points; otherwise re-derived by mutual nearest
/// neighbours under the ground-truth warp.
MatchMatrix superpoint_targets(const ScenePair& pair, const EncodedCloud& p, const EncodedCloud& q);

struct LossWeights {
  double matching = 1.0;  // L_M
  double warping = 1.0;   // L_W
  double simple = 1.0;    // L_simple
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 2;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  // Extra weight on positive entries. 0 picks negatives / positives per pair.
  double focal_pos_weight = 0.0;
  LossWeights loss_weights;
  std::uint64_t seed = 0;
  bool freeze_encoder = false;
  bool symmetric_targets = false;  // diffuse 2 E0 - 1 instead of E0
  double grad_clip = 0.0;          // max global gradient norm, 0 disables

  void validate() const;
};

/// Mean over entries of
///   -alpha w (1 - p)^gamma log p        where target = 1,
///   -(1 - alpha) p^gamma log(1 - p)     where target = 0,
/// with p clamped to [1e-7, 1 - 1e-7] (no gradient outside the clamp).
Tensor focal_loss(const Tensor& pred, const MatchMatrix& target, double gamma, double alpha, double pos_weight = 1.0);

/// L_simple reweight (T - t + 1) / T.
double timestep_weight(int t, int total_steps);

struct LossTerms {
  double total = 0.0;   // weight * simple + matching + warping (each times its loss weight)
  double simple = 0.0;  // before the timestep reweight
  double matching = 0.0;
  double warping = 0.0;
  int t = 0;
  double weight = 0.0;  // timestep_weight(t, T)
  bool warping_skipped = false;
};

/// Forward and backward pass for one pair; gradients accumulate on the
/// leaves of `params` (which must hold the same layout as model.params).
LossTerms pair_loss(const ScenePair& pair, const Model& model, const ParameterStore& params,
                    const DiffusionSchedule& s, const TrainConfig& cfg, Rng& rng);

/// pair_loss followed by one Adam update.
LossTerms train_step(const ScenePair& pair, Model& model, AdamState& adam, const DiffusionSchedule& s,
                     const TrainConfig& cfg, Rng& rng);

struct LossRecord {
  int step = 0;
  int epoch = 0;
  double total = 0.0;
  double simple = 0.0;
  double matching = 0.0;
  double warping = 0.0;
};

using TrainProgress = std::function<void(const LossRecord&)>;

/// Mini-batch training. Per-pair gradients are computed on parameter
/// snapshots across `threads` workers and summed in batch order, so the
/// result does not depend on the thread count.
std::vector<LossRecord> train_model(Model& model, std::span<const ScenePair> pairs, const DiffusionSchedule& s,
                                    const TrainConfig& cfg, int threads = 1, const TrainProgress& progress = {});

void write_loss_curve(const std::filesystem::path& path, std::span<const LossRecord> curve);

// ---------------------------------------------------------------------------
// Sampling

enum class InitMode { gaussian, backbone };

struct SampleConfig {
  InitMode init_mode = InitMode::gaussian;
  int steps = 10;
  double eta = 0.0;
  DdimFormula formula = DdimFormula::standard;
  int top_k = 64;
  bool mutual = true;
  // Inlier radii (meters) for trimmed_refine of the registration estimate;
  // empty keeps the plain soft Procrustes transform.
  std::vector<double> refine_thresholds{0.5, 0.2, 0.1};
  int refine_passes = 3;

  void validate() const;
};

/// Predicts the clean matrix from an iterate at timestep t.
using DenoiseFn = std::function<MatchMatrix(const MatchMatrix& e_t, int t)>;

/// Walks tau from the back down to step 0. Returns the last estimate of the
/// clean matrix; every estimate is appended to `trace` when given.
MatchMatrix run_reverse_chain(MatchMatrix e_T, const DenoiseFn& denoise, const DiffusionSchedule& s,
                              const TauSubsequence& tau, DdimFormula formula, Rng& rng,
                              std::vector<MatchMatrix>* trace = nullptr);

struct SampleResult {
  MatchMatrix e0_hat;
  RigidTransform transform;     // soft Procrustes on e0_hat
  RigidTransform registration;  // transform after trimmed refinement on the correspondences
  std::vector<Match> correspondences;  // indices into the input clouds
  int degenerate_steps = 0;
};

/// E^T: standard normal, or encoder logits standardised to zero mean and
/// unit variance.
MatchMatrix initial_iterate(const EncodedCloud& p, const EncodedCloud& q, const Model& model, InitMode mode, Rng& rng);

SampleResult reverse_sample(const EncodedCloud& p, const EncodedCloud& q, const Model& model,
                            const DiffusionSchedule& s, const SampleConfig& cfg, Rng& rng,
                            std::vector<MatchMatrix>* trace = nullptr);

/// Samples every pair; pair k uses Rng(seed).fork(k).
std::vector<SampleResult> sample_pairs(std::span<const ScenePair> pairs, const Model& model,
                                       const DiffusionSchedule& s, const SampleConfig& cfg, std::uint64_t seed,
                                       int threads = 1);

/// Worker count from MATCHDIFF_THREADS, else the hardware concurrency.
int default_threads();

/// Runs fn(0..n-1) on up to `threads` workers. Exceptions are rethrown
/// (lowest index first) after all workers finish.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace matchdiff
