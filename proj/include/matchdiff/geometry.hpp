#pragma once

#include <span>

#include "matchdiff/dsm.hpp"

namespace matchdiff {

/// N x 3 coordinates in meters, one point per row.
using PointCloud = Eigen::Matrix<double, Eigen::Dynamic, 3>;

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  RigidTransform inverse() const { return {rotation.transpose(), -(rotation.transpose() * translation)}; }
  /// (*this) after `first`.
  RigidTransform compose(const RigidTransform& first) const {
    return {rotation * first.rotation, rotation * first.translation + translation};
  }
};

/// Each row mapped to R p + t.
template <class Derived>
PointCloud rigid_warp(const Eigen::MatrixBase<Derived>& p, const RigidTransform& rt) {
  PointCloud out = p * rt.rotation.transpose();
  out.rowwise() += rt.translation.transpose();
  return out;
}

/// Weighted Kabsch: minimises sum_k w_k |R p_k + t - q_k|^2. Weights are
/// renormalised to sum one. Throws DegenerateError when the weighted
/// cross-covariance has rank < 2 or every weight is zero.
RigidTransform weighted_procrustes(const PointCloud& p, const PointCloud& q, const Eigen::VectorXd& weights);

/// Top-k entries of a projected matching matrix, weighted by their scores,
/// fed to weighted_procrustes. k is clipped to N * M.
RigidTransform soft_procrustes(const MatchMatrix& e, const PointCloud& p, const PointCloud& q, std::size_t k,
                               bool mutual = false);

/// Re-fits weighted_procrustes on the matches (indices into p and q) whose
/// residual under the current estimate is below each threshold in turn,
/// `passes` times per threshold. A pass that keeps fewer than three matches
/// or is degenerate leaves the estimate unchanged.
RigidTransform trimmed_refine(const PointCloud& p, const PointCloud& q, std::span<const Match> matches,
                              RigidTransform estimate, std::span<const double> thresholds, int passes = 3);

struct TransformError {
  double rotation = 0.0;     // radians
  double translation = 0.0;  // meters
};

TransformError transform_error(const RigidTransform& pred, const RigidTransform& gt);

/// Inverse-distance weighted average of the flows of the k nearest anchors.
/// A query within 1e-12 m of an anchor returns that anchor's flow.
Eigen::Vector3d interpolate_flow(const Eigen::Vector3d& u, const PointCloud& anchors, const PointCloud& flows,
                                 std::size_t k = 3);

/// Indices of the k nearest rows of `points` to `u`, nearest first (ties by index).
std::vector<Index> nearest_neighbors(const PointCloud& points, const Eigen::Vector3d& u, std::size_t k);

}  // namespace matchdiff
