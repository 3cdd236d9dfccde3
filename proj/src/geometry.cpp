#include "matchdiff/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "matchdiff/error.hpp"

namespace matchdiff {

RigidTransform weighted_procrustes(const PointCloud& p, const PointCloud& q, const Eigen::VectorXd& weights) {
  if (p.rows() != q.rows() || p.rows() != weights.size())
    throw DimensionError("weighted_procrustes: point and weight counts differ");
  if ((weights.array() < 0.0).any() || !weights.allFinite())
    throw NumericError("weighted_procrustes: weights must be finite and non-negative");
  const double total = weights.sum();
  if (!(total > 0.0)) throw DegenerateError("weighted_procrustes: all weights are zero");
  const Eigen::VectorXd w = weights / total;

  const Eigen::RowVector3d p_mean = w.transpose() * p;
  const Eigen::RowVector3d q_mean = w.transpose() * q;
  const PointCloud pc = p.rowwise() - p_mean;
  const PointCloud qc = q.rowwise() - q_mean;
  const Eigen::Matrix3d h = pc.transpose() * w.asDiagonal() * qc;

  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  const double scale = std::max(sv(0), 1e-300);
  if (sv(1) <= 1e-12 * scale || sv(0) <= 1e-300)
    throw DegenerateError("weighted_procrustes: correspondences are collinear");

  const Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;

  RigidTransform rt;
  rt.rotation = v * d * u.transpose();
  rt.translation = q_mean.transpose() - rt.rotation * p_mean.transpose();
  return rt;
}

RigidTransform soft_procrustes(const MatchMatrix& e, const PointCloud& p, const PointCloud& q, std::size_t k,
                               bool mutual) {
  if (e.rows() != p.rows() || e.cols() != q.rows())
    throw DimensionError("soft_procrustes: matching matrix is " + std::to_string(e.rows()) + "x" +
                         std::to_string(e.cols()) + " but clouds have " + std::to_string(p.rows()) + " and " +
                         std::to_string(q.rows()) + " points");
  if (k < 3) throw ConfigError("soft_procrustes: k must be >= 3");
  const auto matches = top_k_matches(e, std::min<std::size_t>(k, static_cast<std::size_t>(e.size())), mutual);
  PointCloud ps(static_cast<Index>(matches.size()), 3);
  PointCloud qs(static_cast<Index>(matches.size()), 3);
  Eigen::VectorXd w(static_cast<Index>(matches.size()));
  for (std::size_t n = 0; n < matches.size(); ++n) {
    const auto r = static_cast<Index>(n);
    ps.row(r) = p.row(matches[n].src);
    qs.row(r) = q.row(matches[n].tgt);
    w(r) = matches[n].score;
  }
  return weighted_procrustes(ps, qs, w);
}

RigidTransform trimmed_refine(const PointCloud& p, const PointCloud& q, std::span<const Match> matches,
                              RigidTransform estimate, std::span<const double> thresholds, int passes) {
  for (const double threshold : thresholds)
    for (int pass = 0; pass < passes; ++pass) {
      std::vector<const Match*> keep;
      for (const auto& m : matches)
        if ((estimate.apply(p.row(m.src).transpose()) - q.row(m.tgt).transpose()).norm() < threshold) keep.push_back(&m);
      if (keep.size() < 3) break;
      PointCloud ps(static_cast<Index>(keep.size()), 3), qs(static_cast<Index>(keep.size()), 3);
      Eigen::VectorXd w(static_cast<Index>(keep.size()));
      for (std::size_t n = 0; n < keep.size(); ++n) {
        const auto r = static_cast<Index>(n);
        ps.row(r) = p.row(keep[n]->src);
        qs.row(r) = q.row(keep[n]->tgt);
        w(r) = keep[n]->score;
      }
      try {
        estimate = weighted_procrustes(ps, qs, w);
      } catch (const DegenerateError&) {
        break;
      }
    }
  return estimate;
}

TransformError transform_error(const RigidTransform& pred, const RigidTransform& gt) {
  // atan2 keeps full precision for small angles where acos of the trace does not.
  const Eigen::Matrix3d r = pred.rotation.transpose() * gt.rotation;
  const double c = (r.trace() - 1.0) / 2.0;
  const double s = Eigen::Vector3d(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)).norm() / 2.0;
  return {std::atan2(s, c), (pred.translation - gt.translation).norm()};
}

std::vector<Index> nearest_neighbors(const PointCloud& points, const Eigen::Vector3d& u, std::size_t k) {
  std::vector<Index> idx(static_cast<std::size_t>(points.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::vector<double> d2(idx.size());
  for (Index i = 0; i < points.rows(); ++i) d2[static_cast<std::size_t>(i)] = (points.row(i).transpose() - u).squaredNorm();
  const std::size_t take = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(), [&](Index a, Index b) {
    const double da = d2[static_cast<std::size_t>(a)];
    const double db = d2[static_cast<std::size_t>(b)];
    return da != db ? da < db : a < b;
  });
  idx.resize(take);
  return idx;
}

Eigen::Vector3d interpolate_flow(const Eigen::Vector3d& u, const PointCloud& anchors, const PointCloud& flows,
                                 std::size_t k) {
  if (anchors.rows() == 0) throw DimensionError("interpolate_flow: no anchors");
  if (anchors.rows() != flows.rows()) throw DimensionError("interpolate_flow: anchor and flow counts differ");
  const auto nn = nearest_neighbors(anchors, u, std::max<std::size_t>(k, 1));
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  double norm = 0.0;
  for (Index i : nn) {
    const double d = (anchors.row(i).transpose() - u).norm();
    if (d < 1e-12) return flows.row(i).transpose();
    acc += flows.row(i).transpose() / d;
    norm += 1.0 / d;
  }
  return acc / norm;
}

}  // namespace matchdiff
