#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "matchdiff/data.hpp"

namespace matchdiff {

/// A correspondence expressed by its two endpoint positions.
struct PointMatch {
  Eigen::Vector3d p;
  Eigen::Vector3d q;
};

using WarpFn = std::function<Eigen::Vector3d(const Eigen::Vector3d&)>;

/// Fraction of matches with |W_gt(p) - q| < sigma; 0 for an empty prediction.
double inlier_ratio(std::span<const PointMatch> pred, const WarpFn& w_gt, double sigma);

inline constexpr double kFmrInlierThreshold = 0.05;
inline constexpr double kRegistrationRmse = 0.2;

/// Fraction of pairs whose inlier ratio exceeds `ir_threshold`.
double feature_matching_recall(std::span<const double> inlier_ratios, double ir_threshold = kFmrInlierThreshold);

/// RMS distance between pred(p) and gt(p) over the given source points.
double transform_rmse(const RigidTransform& pred, const RigidTransform& gt, const PointCloud& points);
bool registration_recall(const RigidTransform& pred, const RigidTransform& gt, const PointCloud& gt_src_points,
                         double rmse_threshold = kRegistrationRmse);

/// Fraction of ground-truth matches (u, v) with |u + Gamma(u) - v| < sigma,
/// Gamma interpolating the flows q - p of the predicted matches (k nearest).
double nfmr(std::span<const PointMatch> gt, std::span<const PointMatch> pred, double sigma, std::size_t k = 3);

struct FlowThresholds {
  double strict_abs = 0.025;
  double strict_rel = 0.025;
  double relaxed_abs = 0.05;
  double relaxed_rel = 0.05;
  double outlier_abs = 0.3;
  double outlier_rel = 0.1;
};

struct FlowMetrics {
  double epe = 0.0;
  double acc_s = 0.0;
  double acc_r = 0.0;
  double outlier = 0.0;
};

FlowMetrics flow_metrics(const PointCloud& pred_flow, const PointCloud& gt_flow, const FlowThresholds& th = {});

struct MetricThresholds {
  std::optional<double> sigma;  // overrides the per-pair sigma
  double fmr_ir = kFmrInlierThreshold;
  double rr_rmse = kRegistrationRmse;
  FlowThresholds flow;
};

struct PairMetrics {
  std::string name;
  double ir = 0.0;
  bool fmr_hit = false;
  std::optional<bool> rr_hit;  // rigid scenes only
  std::optional<double> rmse;
  double rotation_error = 0.0;     // radians, rigid scenes
  double translation_error = 0.0;  // meters, rigid scenes
  double nfmr = 0.0;
  double epe = 0.0;
  double acc_s = 0.0;
  double acc_r = 0.0;
  double outlier = 0.0;
  std::size_t n_pred = 0;
};

struct EvalReport {
  std::vector<PairMetrics> per_pair;
  MetricThresholds thresholds;

  double mean_ir() const;
  double fmr() const;
  std::optional<double> rr() const;
  double mean_nfmr() const;
  FlowMetrics mean_flow() const;

  nlohmann::json to_json() const;
  void write_json(const std::filesystem::path& path) const;
  /// One row per pair then an "aggregate" row.
  void write_csv(const std::filesystem::path& path) const;
};

/// Predicted flow of every source point: interpolated from the matches for
/// deformable scenes, the predicted rigid motion otherwise.
PointCloud predicted_flow(const ScenePair& pair, std::span<const Match> pred, const RigidTransform& pred_rt);

PairMetrics evaluate_pair(const ScenePair& pair, std::span<const Match> pred, const RigidTransform& pred_rt,
                          const MetricThresholds& th = {});

}  // namespace matchdiff
