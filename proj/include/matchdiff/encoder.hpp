#pragma once

// Stand-in for a convolutional point backbone: per-point descriptors of the
// local neighbourhood in relative coordinates, lifted by a shared MLP. The
// descriptors only use offsets between points, so features are invariant to
// translating the whole cloud.

#include <vector>

#include "matchdiff/denoiser.hpp"

namespace matchdiff {

struct EncoderConfig {
  int d_model = 66;
  int neighbors = 8;
  int histogram_bins = 8;
  double histogram_radius = 1.0;  // meters covered by the radial histogram
  double voxel_size = 0.0;        // 0 keeps input points as superpoints

  void validate() const;
  /// Width of the descriptor fed to the MLP.
  int descriptor_width() const { return 7 + histogram_bins; }
};

struct EncodedCloud {
  PointCloud superpoints;
  Tensor features;                  // N x d_model; undefined for a skeleton
  std::vector<Index> origin_indices;  // superpoint -> representative input index
};

/// Centroid of every occupied voxel, ordered by first occurrence in the input.
/// origin_indices holds the first input point that fell in each voxel.
EncodedCloud voxel_subsample(const PointCloud& p, double voxel);

/// Skeleton that keeps every input point as a superpoint.
EncodedCloud identity_skeleton(const PointCloud& p);

/// N x descriptor_width constant descriptors:
/// [mean offset (3), |mean offset|, sqrt covariance eigenvalues (3, descending),
///  normalised radial histogram of neighbour distances].
Matrix local_descriptors(const PointCloud& p, const EncoderConfig& cfg);

void init_encoder_params(ParameterStore& params, const EncoderConfig& cfg, Rng& rng);

/// Fills `features` with the shared 3-layer MLP over local_descriptors.
/// Clouds with fewer than two points get all-zero features.
EncodedCloud encode_features(EncodedCloud skeleton, const ParameterStore& params, const EncoderConfig& cfg);

/// Backbone matching logits from the encoder's own projection heads.
Tensor initial_matching(const Tensor& f_p, const Tensor& f_q, const RotaryEncoding& rot_p,
                        const RotaryEncoding& rot_q, const ParameterStore& params);

}  // namespace matchdiff
