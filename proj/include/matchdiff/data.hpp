#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "matchdiff/geometry.hpp"
#include "matchdiff/rng.hpp"

namespace matchdiff {

enum class SceneKind { rigid, deformable };

struct ScenePair {
  std::string name;
  SceneKind kind = SceneKind::rigid;
  PointCloud src;
  PointCloud tgt;
  RigidTransform gt_transform;  // rigid scenes; identity for deformable ones
  PointCloud gt_flow;           // per source point, deformable scenes (empty for rigid)
  std::vector<std::pair<Index, Index>> gt_pairs;
  MatchMatrix gt_matrix;
  double overlap = 0.0;
  double sigma = 0.0;

  /// Ground-truth warp of source point i.
  Eigen::Vector3d warp_source(Index i) const;
  /// Ground-truth warp of an arbitrary source-frame position. Deformable
  /// scenes use the flow of the nearest source point.
  Eigen::Vector3d warp_point(const Eigen::Vector3d& p) const;
  /// Displacement W(p_i) - p_i for every source point.
  PointCloud gt_flow_field() const;
};

inline constexpr double kRigidSigma = 0.1;
inline constexpr double kDeformableSigma = 0.04;

struct RigidPairOptions {
  int n_points = 128;
  double overlap = 1.0;
  double noise_std = 0.0;
  double sigma = kRigidSigma;
  double box = 3.0;
};

struct DeformablePairOptions {
  int n_points = 128;
  int n_rbf = 4;
  double max_disp = 0.2;
  double overlap = 1.0;
  double sigma = kDeformableSigma;
  double box = 3.0;
};

/// Dense samples from spheres, planes and Gaussian clusters inside a
/// box^3 cube centred at the origin.
PointCloud sample_primitives(int count, double box, Rng& rng);

/// Uniformly distributed rotation (Shoemake's quaternion method).
Eigen::Matrix3d random_rotation(Rng& rng);

ScenePair gen_rigid_pair(const RigidPairOptions& opt, std::uint64_t seed);
ScenePair gen_deformable_pair(const DeformablePairOptions& opt, std::uint64_t seed);

struct RbfBump {
  Eigen::Vector3d center;
  Eigen::Vector3d amplitude;
  double width = 1.0;
};

/// sum_k a_k exp(-|x - c_k|^2 / (2 w_k^2)).
Eigen::Vector3d rbf_displacement(const std::vector<RbfBump>& bumps, const Eigen::Vector3d& x);
/// Lipschitz constant of rbf_displacement: sum_k |a_k| / (w_k sqrt(e)).
double rbf_lipschitz(const std::vector<RbfBump>& bumps);

/// One-to-one pairs (i, j) where j is i's nearest warped neighbour, i is j's,
/// and the distance is below sigma. Sorted by i.
std::vector<std::pair<Index, Index>> mutual_nearest_pairs(const PointCloud& warped_src, const PointCloud& tgt,
                                                          double sigma);

/// Binary N x M matrix with ones exactly at pair.gt_pairs.
MatchMatrix gt_matching_matrix(const ScenePair& pair);

// ---------------------------------------------------------------------------
// Files

/// ASCII PLY with float/double x, y, z vertex properties. Other vertex
/// properties are skipped.
PointCloud load_ply(const std::filesystem::path& path);
void save_ply(const std::filesystem::path& path, const PointCloud& cloud);

struct CorrespondenceRow {
  Index src = 0;
  Index tgt = 0;
  double score = 0.0;
};

void save_correspondences(const std::filesystem::path& path, const std::vector<CorrespondenceRow>& rows);
std::vector<CorrespondenceRow> load_correspondences(const std::filesystem::path& path);

inline constexpr int kManifestSchema = 1;

/// Writes PLY/CSV files plus manifest.json into `dir`.
void save_dataset(const std::filesystem::path& dir, const std::vector<ScenePair>& pairs);
/// One manifest entry; file names are relative to `dir`.
ScenePair load_pair(const std::filesystem::path& dir, const nlohmann::json& entry);
/// Reads every pair listed in dir/manifest.json, in manifest order.
std::vector<ScenePair> load_dataset(const std::filesystem::path& dir);

}  // namespace matchdiff
