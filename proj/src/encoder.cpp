#include "matchdiff/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "matchdiff/error.hpp"

namespace matchdiff {

void EncoderConfig::validate() const {
  if (d_model <= 0) throw ConfigError("encoder.d_model must be positive");
  if (neighbors < 1) throw ConfigError("encoder.neighbors must be >= 1");
  if (histogram_bins < 1) throw ConfigError("encoder.histogram_bins must be >= 1");
  if (!(histogram_radius > 0.0)) throw ConfigError("encoder.histogram_radius must be > 0");
  if (voxel_size < 0.0) throw ConfigError("encoder.voxel_size must be >= 0");
}

EncodedCloud voxel_subsample(const PointCloud& p, double voxel) {
  if (!(voxel > 0.0)) throw ConfigError("voxel_subsample: voxel size must be > 0");
  using Key = std::tuple<long long, long long, long long>;
  std::map<Key, Index> slot;
  std::vector<Eigen::RowVector3d> sums;
  std::vector<int> counts;
  EncodedCloud out;
  for (Index i = 0; i < p.rows(); ++i) {
    const Key key{static_cast<long long>(std::floor(p(i, 0) / voxel)), static_cast<long long>(std::floor(p(i, 1) / voxel)),
                  static_cast<long long>(std::floor(p(i, 2) / voxel))};
    auto [it, inserted] = slot.try_emplace(key, static_cast<Index>(sums.size()));
    if (inserted) {
      sums.push_back(p.row(i));
      counts.push_back(1);
      out.origin_indices.push_back(i);
    } else {
      sums[static_cast<std::size_t>(it->second)] += p.row(i);
      ++counts[static_cast<std::size_t>(it->second)];
    }
  }
  out.superpoints.resize(static_cast<Index>(sums.size()), 3);
  for (std::size_t k = 0; k < sums.size(); ++k)
    out.superpoints.row(static_cast<Index>(k)) = sums[k] / static_cast<double>(counts[k]);
  return out;
}

EncodedCloud identity_skeleton(const PointCloud& p) {
  EncodedCloud out;
  out.superpoints = p;
  out.origin_indices.resize(static_cast<std::size_t>(p.rows()));
  for (Index i = 0; i < p.rows(); ++i) out.origin_indices[static_cast<std::size_t>(i)] = i;
  return out;
}

Matrix local_descriptors(const PointCloud& p, const EncoderConfig& cfg) {
  const Index n = p.rows();
  Matrix desc = Matrix::Zero(n, cfg.descriptor_width());
  if (n < 2) return desc;
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(cfg.neighbors), static_cast<std::size_t>(n - 1));
  for (Index i = 0; i < n; ++i) {
    // k + 1 nearest includes the point itself at distance zero.
    auto nn = nearest_neighbors(p, p.row(i).transpose(), k + 1);
    nn.erase(std::remove(nn.begin(), nn.end(), i), nn.end());
    nn.resize(k);
    Eigen::Matrix<double, Eigen::Dynamic, 3> off(static_cast<Index>(k), 3);
    for (std::size_t m = 0; m < k; ++m) off.row(static_cast<Index>(m)) = p.row(nn[m]) - p.row(i);

    const Eigen::RowVector3d mu = off.colwise().mean();
    const auto centered = off.rowwise() - mu;
    const Eigen::Matrix3d cov = (centered.transpose() * centered) / static_cast<double>(k);
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov, Eigen::EigenvaluesOnly);
    const Eigen::Vector3d ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();

    desc.block(i, 0, 1, 3) = mu;
    desc(i, 3) = mu.norm();
    desc(i, 4) = ev(2);
    desc(i, 5) = ev(1);
    desc(i, 6) = ev(0);
    const double width = cfg.histogram_radius / cfg.histogram_bins;
    for (std::size_t m = 0; m < k; ++m) {
      const double r = off.row(static_cast<Index>(m)).norm();
      const int bin = std::min(cfg.histogram_bins - 1, static_cast<int>(r / width));
      desc(i, 7 + bin) += 1.0 / static_cast<double>(k);
    }
  }
  return desc;
}

void init_encoder_params(ParameterStore& params, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index in = cfg.descriptor_width();
  const Index d = cfg.d_model;
  params.add("encoder.mlp.w1", glorot(in, d, rng));
  params.add("encoder.mlp.b1", Matrix::Zero(1, d));
  params.add("encoder.mlp.w2", glorot(d, d, rng));
  params.add("encoder.mlp.b2", Matrix::Zero(1, d));
  params.add("encoder.mlp.w3", glorot(d, d, rng));
  params.add("encoder.mlp.b3", Matrix::Zero(1, d));
  params.add("encoder.match.wp", glorot(d, d, rng));
  params.add("encoder.match.wq", glorot(d, d, rng));
}

EncodedCloud encode_features(EncodedCloud skeleton, const ParameterStore& params, const EncoderConfig& cfg) {
  const Index n = skeleton.superpoints.rows();
  if (n < 2) {
    skeleton.features = Tensor::constant(Matrix::Zero(n, cfg.d_model));
    return skeleton;
  }
  const Tensor desc = Tensor::constant(local_descriptors(skeleton.superpoints, cfg));
  Tensor h = relu(add_row(matmul(desc, params.at("encoder.mlp.w1")), params.at("encoder.mlp.b1")));
  h = relu(add_row(matmul(h, params.at("encoder.mlp.w2")), params.at("encoder.mlp.b2")));
  skeleton.features = add_row(matmul(h, params.at("encoder.mlp.w3")), params.at("encoder.mlp.b3"));
  return skeleton;
}

Tensor initial_matching(const Tensor& f_p, const Tensor& f_q, const RotaryEncoding& rot_p,
                        const RotaryEncoding& rot_q, const ParameterStore& params) {
  return matching_logits(f_p, f_q, rot_p, rot_q, params.at("encoder.match.wp"), params.at("encoder.match.wq"));
}

}  // namespace matchdiff
