#include "matchdiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "matchdiff/encoder.hpp"
#include "matchdiff/error.hpp"

namespace matchdiff {

namespace fs = std::filesystem;

Eigen::Vector3d ScenePair::warp_source(Index i) const {
  if (kind == SceneKind::deformable) return src.row(i).transpose() + gt_flow.row(i).transpose();
  return gt_transform.apply(src.row(i).transpose());
}

Eigen::Vector3d ScenePair::warp_point(const Eigen::Vector3d& p) const {
  if (kind == SceneKind::rigid) return gt_transform.apply(p);
  const auto nn = nearest_neighbors(src, p, 1);
  return p + gt_flow.row(nn.front()).transpose();
}

PointCloud ScenePair::gt_flow_field() const {
  if (kind == SceneKind::deformable) return gt_flow;
  return rigid_warp(src, gt_transform) - src;
}

// ---------------------------------------------------------------------------
// Synthesis

namespace {

Eigen::Vector3d random_unit(Rng& rng) {
  Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
  while (v.norm() < 1e-9) v = {rng.normal(), rng.normal(), rng.normal()};
  return v.normalized();
}

void shuffle(std::vector<Index>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
}

PointCloud gather_rows(const PointCloud& p, const std::vector<Index>& idx) {
  PointCloud out(static_cast<Index>(idx.size()), 3);
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Index>(k)) = p.row(idx[k]);
  return out;
}

// Well-spread base cloud with exactly `count` points.
PointCloud base_cloud(int count, double box, Rng& rng) {
  const PointCloud dense = sample_primitives(std::max(40 * count, 2000), box, rng);
  double voxel = box / 6.0;
  for (int attempt = 0; attempt < 50; ++attempt, voxel *= 0.85) {
    EncodedCloud sub = voxel_subsample(dense, voxel);
    if (sub.superpoints.rows() < count) continue;
    std::vector<Index> idx(static_cast<std::size_t>(sub.superpoints.rows()));
    std::iota(idx.begin(), idx.end(), Index{0});
    shuffle(idx, rng);
    idx.resize(static_cast<std::size_t>(count));
    std::sort(idx.begin(), idx.end());
    return gather_rows(sub.superpoints, idx);
  }
  throw DataError("cannot synthesise " + std::to_string(count) + " distinct superpoints after 50 attempts");
}

struct Crop {
  std::vector<Index> src;
  std::vector<Index> tgt;
  double overlap = 0.0;
};

// Two half-spaces along a random direction: the source keeps the n lowest
// projections, the target the n highest, so they share 2n - total points.
Crop half_space_crop(const PointCloud& base, int n, Rng& rng) {
  const Eigen::Vector3d dir = random_unit(rng);
  const Eigen::VectorXd proj = base * dir;
  std::vector<Index> order(static_cast<std::size_t>(base.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return proj(a) < proj(b); });
  Crop c;
  c.src.assign(order.begin(), order.begin() + n);
  c.tgt.assign(order.end() - n, order.end());
  c.overlap = static_cast<double>(2 * n - base.rows()) / static_cast<double>(n);
  return c;
}

int total_points_for(int n, double overlap) {
  return static_cast<int>(std::lround(static_cast<double>(n) * (2.0 - overlap)));
}

}  // namespace

PointCloud sample_primitives(int count, double box, Rng& rng) {
  const double half = box / 2.0;
  const int n_prims = rng.uniform_int(5, 7);
  PointCloud out(count, 3);
  Index row = 0;
  for (int k = 0; k < n_prims; ++k) {
    const int share = k + 1 == n_prims ? count - static_cast<int>(row) : count / n_prims;
    const int type = rng.uniform_int(0, 2);
    const Eigen::Vector3d center(rng.uniform(-0.6, 0.6) * half, rng.uniform(-0.6, 0.6) * half,
                                 rng.uniform(-0.6, 0.6) * half);
    if (type == 0) {  // sphere shell
      const double radius = rng.uniform(0.3, 0.8);
      for (int m = 0; m < share; ++m) out.row(row++) = (center + radius * random_unit(rng)).transpose();
    } else if (type == 1) {  // rectangular plane patch
      const Eigen::Vector3d normal = random_unit(rng);
      Eigen::Vector3d u = normal.unitOrthogonal();
      Eigen::Vector3d v = normal.cross(u);
      const double a = rng.uniform(0.8, 1.6);
      const double b = rng.uniform(0.8, 1.6);
      for (int m = 0; m < share; ++m)
        out.row(row++) = (center + rng.uniform(-a, a) * u + rng.uniform(-b, b) * v).transpose();
    } else {  // anisotropic Gaussian cluster
      const Eigen::Matrix3d rot = random_rotation(rng);
      const Eigen::Vector3d sd(rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4));
      for (int m = 0; m < share; ++m) {
        const Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
        out.row(row++) = (center + rot * sd.cwiseProduct(z)).transpose();
      }
    }
  }
  return out.cwiseMax(-half).cwiseMin(half);
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  const double u1 = rng.uniform();
  const double u2 = rng.uniform();
  const double u3 = rng.uniform();
  const double two_pi = 2.0 * std::numbers::pi;
  const Eigen::Quaterniond q(std::sqrt(u1) * std::cos(two_pi * u3), std::sqrt(1.0 - u1) * std::sin(two_pi * u2),
                             std::sqrt(1.0 - u1) * std::cos(two_pi * u2), std::sqrt(u1) * std::sin(two_pi * u3));
  return q.normalized().toRotationMatrix();
}

std::vector<std::pair<Index, Index>> mutual_nearest_pairs(const PointCloud& warped_src, const PointCloud& tgt,
                                                          double sigma) {
  std::vector<std::pair<Index, Index>> pairs;
  if (warped_src.rows() == 0 || tgt.rows() == 0) return pairs;
  std::vector<Index> src_best(static_cast<std::size_t>(warped_src.rows()));
  std::vector<Index> tgt_best(static_cast<std::size_t>(tgt.rows()));
  for (Index i = 0; i < warped_src.rows(); ++i)
    src_best[static_cast<std::size_t>(i)] = nearest_neighbors(tgt, warped_src.row(i).transpose(), 1).front();
  for (Index j = 0; j < tgt.rows(); ++j)
    tgt_best[static_cast<std::size_t>(j)] = nearest_neighbors(warped_src, tgt.row(j).transpose(), 1).front();
  for (Index i = 0; i < warped_src.rows(); ++i) {
    const Index j = src_best[static_cast<std::size_t>(i)];
    if (tgt_best[static_cast<std::size_t>(j)] != i) continue;
    if ((warped_src.row(i) - tgt.row(j)).norm() < sigma) pairs.emplace_back(i, j);
  }
  return pairs;
}

MatchMatrix gt_matching_matrix(const ScenePair& pair) {
  MatchMatrix e = MatchMatrix::Zero(pair.src.rows(), pair.tgt.rows());
  for (const auto& [i, j] : pair.gt_pairs) e(i, j) = 1.0;
  return e;
}

ScenePair gen_rigid_pair(const RigidPairOptions& opt, std::uint64_t seed) {
  if (!(opt.overlap > 0.0 && opt.overlap <= 1.0)) throw ConfigError("rigid pair: overlap must lie in (0, 1]");
  if (opt.n_points < 3) throw ConfigError("rigid pair: need at least 3 points");
  Rng rng(seed);
  for (int attempt = 0; attempt < 50; ++attempt) {
    const PointCloud base = base_cloud(total_points_for(opt.n_points, opt.overlap), opt.box, rng);
    Crop crop = half_space_crop(base, opt.n_points, rng);
    if (std::abs(crop.overlap - opt.overlap) > 0.05) continue;
    shuffle(crop.src, rng);
    shuffle(crop.tgt, rng);

    ScenePair pair;
    pair.kind = SceneKind::rigid;
    pair.sigma = opt.sigma;
    pair.overlap = crop.overlap;
    pair.gt_transform.rotation = random_rotation(rng);
    pair.gt_transform.translation = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    pair.src = gather_rows(base, crop.src);
    pair.tgt = rigid_warp(gather_rows(base, crop.tgt), pair.gt_transform);
    if (opt.noise_std > 0.0)
      for (Index j = 0; j < pair.tgt.rows(); ++j)
        for (int c = 0; c < 3; ++c) pair.tgt(j, c) += opt.noise_std * rng.normal();
    pair.gt_pairs = mutual_nearest_pairs(rigid_warp(pair.src, pair.gt_transform), pair.tgt, opt.sigma);
    pair.gt_matrix = gt_matching_matrix(pair);
    return pair;
  }
  throw DataError("rigid pair: overlap target " + std::to_string(opt.overlap) + " unreachable after 50 attempts");
}

Eigen::Vector3d rbf_displacement(const std::vector<RbfBump>& bumps, const Eigen::Vector3d& x) {
  Eigen::Vector3d d = Eigen::Vector3d::Zero();
  for (const auto& b : bumps) d += b.amplitude * std::exp(-(x - b.center).squaredNorm() / (2.0 * b.width * b.width));
  return d;
}

double rbf_lipschitz(const std::vector<RbfBump>& bumps) {
  double l = 0.0;
  for (const auto& b : bumps) l += b.amplitude.norm() / (b.width * std::sqrt(std::numbers::e));
  return l;
}

ScenePair gen_deformable_pair(const DeformablePairOptions& opt, std::uint64_t seed) {
  if (opt.max_disp < 0.0) throw ConfigError("deformable pair: max_disp must be >= 0");
  if (!(opt.overlap > 0.0 && opt.overlap <= 1.0)) throw ConfigError("deformable pair: overlap must lie in (0, 1]");
  Rng rng(seed);
  const double half = opt.box / 2.0;
  for (int attempt = 0; attempt < 50; ++attempt) {
    const PointCloud base = base_cloud(total_points_for(opt.n_points, opt.overlap), opt.box, rng);
    Crop crop = half_space_crop(base, opt.n_points, rng);
    if (std::abs(crop.overlap - opt.overlap) > 0.05) continue;
    shuffle(crop.src, rng);
    shuffle(crop.tgt, rng);

    std::vector<RbfBump> bumps;
    for (int k = 0; k < opt.n_rbf; ++k) {
      RbfBump b;
      b.center = {rng.uniform(-half, half), rng.uniform(-half, half), rng.uniform(-half, half)};
      b.width = rng.uniform(0.3, 1.0);
      b.amplitude = random_unit(rng) * rng.uniform(0.0, opt.max_disp);
      bumps.push_back(b);
    }

    ScenePair pair;
    pair.kind = SceneKind::deformable;
    pair.sigma = opt.sigma;
    pair.overlap = crop.overlap;
    pair.src = gather_rows(base, crop.src);
    const PointCloud tgt_rest = gather_rows(base, crop.tgt);
    pair.tgt.resize(tgt_rest.rows(), 3);
    for (Index j = 0; j < tgt_rest.rows(); ++j)
      pair.tgt.row(j) = tgt_rest.row(j) + rbf_displacement(bumps, tgt_rest.row(j).transpose()).transpose();
    pair.gt_flow.resize(pair.src.rows(), 3);
    for (Index i = 0; i < pair.src.rows(); ++i)
      pair.gt_flow.row(i) = rbf_displacement(bumps, pair.src.row(i).transpose()).transpose();
    pair.gt_pairs = mutual_nearest_pairs(pair.src + pair.gt_flow, pair.tgt, opt.sigma);
    pair.gt_matrix = gt_matching_matrix(pair);
    return pair;
  }
  throw DataError("deformable pair: overlap target unreachable after 50 attempts");
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

PointCloud load_ply(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string where = path.string() + ":";
  std::string line;
  int lineno = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next_line() || line != "ply") throw DataError(where + "1: missing 'ply' magic");
  long long vertex_count = -1;
  bool in_vertex = false;
  std::vector<std::string> props;
  bool ascii = false;
  for (;;) {
    if (!next_line()) throw DataError(where + std::to_string(lineno) + ": header not terminated");
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "end_header") break;
    if (word == "comment" || word == "obj_info" || word.empty()) continue;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") throw DataError(where + std::to_string(lineno) + ": only ascii PLY is supported");
      ascii = true;
    } else if (word == "element") {
      std::string name;
      long long count = -1;
      if (!(ls >> name >> count) || count < 0)
        throw DataError(where + std::to_string(lineno) + ": malformed element line");
      in_vertex = name == "vertex";
      if (in_vertex) vertex_count = count;
      else if (vertex_count < 0)
        throw DataError(where + std::to_string(lineno) + ": elements before 'vertex' are not supported");
    } else if (word == "property") {
      std::string type, name;
      if (!(ls >> type >> name)) throw DataError(where + std::to_string(lineno) + ": malformed property line");
      if (type == "list") throw DataError(where + std::to_string(lineno) + ": list properties are not supported");
      if (in_vertex) props.push_back(name);
    } else {
      throw DataError(where + std::to_string(lineno) + ": unexpected header keyword '" + word + "'");
    }
  }
  if (!ascii) throw DataError(where + " missing format line");
  if (vertex_count < 0) throw DataError(where + " missing vertex element");
  int col[3] = {-1, -1, -1};
  for (std::size_t k = 0; k < props.size(); ++k) {
    if (props[k] == "x") col[0] = static_cast<int>(k);
    if (props[k] == "y") col[1] = static_cast<int>(k);
    if (props[k] == "z") col[2] = static_cast<int>(k);
  }
  for (int c = 0; c < 3; ++c)
    if (col[c] < 0) throw DataError(where + " vertex element lacks property '" + std::string(1, "xyz"[c]) + "'");

  PointCloud cloud(static_cast<Index>(vertex_count), 3);
  std::vector<double> values(props.size());
  for (long long v = 0; v < vertex_count; ++v) {
    if (!next_line()) throw DataError(where + std::to_string(lineno + 1) + ": expected " + std::to_string(vertex_count) + " vertices");
    std::istringstream ls(line);
    for (auto& x : values) {
      std::string tok;
      if (!(ls >> tok)) throw DataError(where + std::to_string(lineno) + ": too few vertex values");
      try {
        x = std::stod(tok);
      } catch (const std::exception&) {
        throw DataError(where + std::to_string(lineno) + ": bad number '" + tok + "'");
      }
    }
    for (int c = 0; c < 3; ++c) cloud(static_cast<Index>(v), c) = values[static_cast<std::size_t>(col[c])];
  }
  return cloud;
}

void save_ply(const fs::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.rows()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  for (Index i = 0; i < cloud.rows(); ++i)
    out << fmt_double(cloud(i, 0)) << ' ' << fmt_double(cloud(i, 1)) << ' ' << fmt_double(cloud(i, 2)) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

void save_correspondences(const fs::path& path, const std::vector<CorrespondenceRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "i,j,score\n";
  for (const auto& r : rows) out << r.src << ',' << r.tgt << ',' << fmt_double(r.score) << '\n';
}

std::vector<CorrespondenceRow> load_correspondences(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "i,j,score") throw DataError(path.string() + ":1: expected header 'i,j,score'");
  std::vector<CorrespondenceRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    CorrespondenceRow r;
    char c1 = 0, c2 = 0;
    std::istringstream ls(line);
    if (!(ls >> r.src >> c1 >> r.tgt >> c2 >> r.score) || c1 != ',' || c2 != ',')
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed correspondence row");
    rows.push_back(r);
  }
  return rows;
}

void save_dataset(const fs::path& dir, const std::vector<ScenePair>& pairs) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["schema"] = kManifestSchema;
  manifest["pairs"] = nlohmann::json::array();
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const ScenePair& p = pairs[k];
    const std::string name = p.name.empty() ? "pair_" + std::to_string(k) : p.name;
    nlohmann::json e;
    e["name"] = name;
    e["kind"] = p.kind == SceneKind::rigid ? "rigid" : "deformable";
    e["src"] = name + "_src.ply";
    e["tgt"] = name + "_tgt.ply";
    e["gt_pairs"] = name + "_gt.csv";
    std::vector<double> rt;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) rt.push_back(p.gt_transform.rotation(r, c));
      rt.push_back(p.gt_transform.translation(r));
    }
    e["gt_transform"] = rt;
    e["sigma"] = p.sigma;
    e["overlap"] = p.overlap;
    save_ply(dir / e["src"].get<std::string>(), p.src);
    save_ply(dir / e["tgt"].get<std::string>(), p.tgt);
    std::vector<CorrespondenceRow> rows;
    for (const auto& [i, j] : p.gt_pairs) rows.push_back({i, j, 1.0});
    save_correspondences(dir / e["gt_pairs"].get<std::string>(), rows);
    if (p.kind == SceneKind::deformable) {
      e["gt_flow"] = name + "_flow.ply";
      save_ply(dir / e["gt_flow"].get<std::string>(), p.gt_flow);
    }
    manifest["pairs"].push_back(e);
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw DataError("failed writing manifest in " + dir.string());
}

ScenePair load_pair(const fs::path& dir, const nlohmann::json& e) {
  std::vector<std::string> missing;
  for (const char* key : {"name", "kind", "src", "tgt", "gt_pairs", "gt_transform", "sigma", "overlap"})
    if (!e.contains(key)) missing.emplace_back(key);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw DataError("manifest entry is missing fields: " + list);
  }
  try {
    ScenePair p;
    p.name = e.at("name").get<std::string>();
    const std::string kind = e.at("kind").get<std::string>();
    if (kind != "rigid" && kind != "deformable") throw DataError("manifest entry '" + p.name + "': unknown kind '" + kind + "'");
    p.kind = kind == "rigid" ? SceneKind::rigid : SceneKind::deformable;
    p.src = load_ply(dir / e.at("src").get<std::string>());
    p.tgt = load_ply(dir / e.at("tgt").get<std::string>());
    const auto rt = e.at("gt_transform").get<std::vector<double>>();
    if (rt.size() != 12) throw DataError("manifest entry '" + p.name + "': gt_transform needs 12 values");
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) p.gt_transform.rotation(r, c) = rt[static_cast<std::size_t>(4 * r + c)];
      p.gt_transform.translation(r) = rt[static_cast<std::size_t>(4 * r + 3)];
    }
    p.sigma = e.at("sigma").get<double>();
    p.overlap = e.at("overlap").get<double>();
    for (const auto& row : load_correspondences(dir / e.at("gt_pairs").get<std::string>())) {
      if (row.src < 0 || row.src >= p.src.rows() || row.tgt < 0 || row.tgt >= p.tgt.rows())
        throw DataError("manifest entry '" + p.name + "': ground-truth pair out of range");
      p.gt_pairs.emplace_back(row.src, row.tgt);
    }
    if (p.kind == SceneKind::deformable) {
      if (!e.contains("gt_flow")) throw DataError("manifest entry '" + p.name + "' is missing fields: gt_flow");
      p.gt_flow = load_ply(dir / e.at("gt_flow").get<std::string>());
      if (p.gt_flow.rows() != p.src.rows()) throw DataError("manifest entry '" + p.name + "': flow count differs from source");
    }
    p.gt_matrix = gt_matching_matrix(p);
    return p;
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("manifest entry has a field of the wrong type: ") + ex.what());
  }
}

std::vector<ScenePair> load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& ex) {
    throw DataError("manifest.json: " + std::string(ex.what()));
  }
  if (!manifest.contains("schema") || !manifest["schema"].is_number_integer() ||
      manifest["schema"].get<int>() != kManifestSchema)
    throw DataError("manifest.json: unsupported or missing schema (expected " + std::to_string(kManifestSchema) + ")");
  if (!manifest.contains("pairs") || !manifest["pairs"].is_array()) throw DataError("manifest.json: missing 'pairs' array");
  std::vector<ScenePair> pairs;
  for (const auto& e : manifest["pairs"]) pairs.push_back(load_pair(dir, e));
  return pairs;
}

}  // namespace matchdiff
