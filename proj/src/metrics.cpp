#include "matchdiff/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "matchdiff/error.hpp"

namespace matchdiff {

double inlier_ratio(std::span<const PointMatch> pred, const WarpFn& w_gt, double sigma) {
  if (pred.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& m : pred)
    if ((w_gt(m.p) - m.q).norm() < sigma) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double feature_matching_recall(std::span<const double> inlier_ratios, double ir_threshold) {
  if (inlier_ratios.empty()) return 0.0;
  std::size_t hits = 0;
  for (double ir : inlier_ratios)
    if (ir > ir_threshold) ++hits;
  return static_cast<double>(hits) / static_cast<double>(inlier_ratios.size());
}

double transform_rmse(const RigidTransform& pred, const RigidTransform& gt, const PointCloud& points) {
  if (points.rows() == 0) throw DimensionError("transform_rmse: no points");
  const PointCloud diff = rigid_warp(points, pred) - rigid_warp(points, gt);
  return std::sqrt(diff.rowwise().squaredNorm().mean());
}

bool registration_recall(const RigidTransform& pred, const RigidTransform& gt, const PointCloud& gt_src_points,
                         double rmse_threshold) {
  return transform_rmse(pred, gt, gt_src_points) < rmse_threshold;
}

double nfmr(std::span<const PointMatch> gt, std::span<const PointMatch> pred, double sigma, std::size_t k) {
  if (gt.empty() || pred.empty()) return 0.0;
  PointCloud anchors(static_cast<Index>(pred.size()), 3);
  PointCloud flows(static_cast<Index>(pred.size()), 3);
  for (std::size_t n = 0; n < pred.size(); ++n) {
    anchors.row(static_cast<Index>(n)) = pred[n].p.transpose();
    flows.row(static_cast<Index>(n)) = (pred[n].q - pred[n].p).transpose();
  }
  std::size_t hits = 0;
  for (const auto& m : gt)
    if ((m.p + interpolate_flow(m.p, anchors, flows, k) - m.q).norm() < sigma) ++hits;
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

FlowMetrics flow_metrics(const PointCloud& pred_flow, const PointCloud& gt_flow, const FlowThresholds& th) {
  if (pred_flow.rows() != gt_flow.rows()) throw DimensionError("flow_metrics: flow counts differ");
  FlowMetrics fm;
  const Index n = pred_flow.rows();
  if (n == 0) return fm;
  const Eigen::VectorXd err = (pred_flow - gt_flow).rowwise().norm();
  const Eigen::VectorXd mag = gt_flow.rowwise().norm();
  const Eigen::ArrayXd rel = err.binaryExpr(mag, [](double e, double m) {
    if (m > 0) return e / m;
    return e == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  });
  const Eigen::ArrayXd e = err.array();
  fm.epe = e.mean();
  fm.acc_s = ((e < th.strict_abs) || (rel < th.strict_rel)).cast<double>().mean();
  fm.acc_r = ((e < th.relaxed_abs) || (rel < th.relaxed_rel)).cast<double>().mean();
  fm.outlier = ((e > th.outlier_abs) || (rel > th.outlier_rel)).cast<double>().mean();
  return fm;
}

PointCloud predicted_flow(const ScenePair& pair, std::span<const Match> pred, const RigidTransform& pred_rt) {
  if (pair.kind == SceneKind::rigid) return rigid_warp(pair.src, pred_rt) - pair.src;
  PointCloud flow = PointCloud::Zero(pair.src.rows(), 3);
  if (pred.empty()) return flow;
  PointCloud anchors(static_cast<Index>(pred.size()), 3);
  PointCloud flows(static_cast<Index>(pred.size()), 3);
  for (std::size_t n = 0; n < pred.size(); ++n) {
    anchors.row(static_cast<Index>(n)) = pair.src.row(pred[n].src);
    flows.row(static_cast<Index>(n)) = pair.tgt.row(pred[n].tgt) - pair.src.row(pred[n].src);
  }
  for (Index i = 0; i < pair.src.rows(); ++i)
    flow.row(i) = interpolate_flow(pair.src.row(i).transpose(), anchors, flows, 3).transpose();
  return flow;
}

PairMetrics evaluate_pair(const ScenePair& pair, std::span<const Match> pred, const RigidTransform& pred_rt,
                          const MetricThresholds& th) {
  const double sigma = th.sigma.value_or(pair.sigma);
  PairMetrics m;
  m.name = pair.name;
  m.n_pred = pred.size();

  std::vector<PointMatch> pred_pts;
  for (const auto& c : pred) pred_pts.push_back({pair.src.row(c.src).transpose(), pair.tgt.row(c.tgt).transpose()});
  std::vector<PointMatch> gt_pts;
  for (const auto& [i, j] : pair.gt_pairs) gt_pts.push_back({pair.src.row(i).transpose(), pair.tgt.row(j).transpose()});

  m.ir = inlier_ratio(pred_pts, [&](const Eigen::Vector3d& p) { return pair.warp_point(p); }, sigma);
  m.fmr_hit = m.ir > th.fmr_ir;
  m.nfmr = nfmr(gt_pts, pred_pts, sigma);

  if (pair.kind == SceneKind::rigid) {
    const TransformError te = transform_error(pred_rt, pair.gt_transform);
    m.rotation_error = te.rotation;
    m.translation_error = te.translation;
    if (!pair.gt_pairs.empty()) {
      PointCloud gt_src(static_cast<Index>(pair.gt_pairs.size()), 3);
      for (std::size_t n = 0; n < pair.gt_pairs.size(); ++n) gt_src.row(static_cast<Index>(n)) = pair.src.row(pair.gt_pairs[n].first);
      m.rmse = transform_rmse(pred_rt, pair.gt_transform, gt_src);
      m.rr_hit = *m.rmse < th.rr_rmse;
    }
  }

  const FlowMetrics fm = flow_metrics(predicted_flow(pair, pred, pred_rt), pair.gt_flow_field(), th.flow);
  m.epe = fm.epe;
  m.acc_s = fm.acc_s;
  m.acc_r = fm.acc_r;
  m.outlier = fm.outlier;
  return m;
}

namespace {

template <class F>
double mean_of(const std::vector<PairMetrics>& v, F f) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (const auto& m : v) s += f(m);
  return s / static_cast<double>(v.size());
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double EvalReport::mean_ir() const { return mean_of(per_pair, [](const PairMetrics& m) { return m.ir; }); }

double EvalReport::fmr() const {
  return mean_of(per_pair, [](const PairMetrics& m) { return m.fmr_hit ? 1.0 : 0.0; });
}

std::optional<double> EvalReport::rr() const {
  double hits = 0.0;
  std::size_t n = 0;
  for (const auto& m : per_pair) {
    if (!m.rr_hit) continue;
    ++n;
    hits += *m.rr_hit ? 1.0 : 0.0;
  }
  if (n == 0) return std::nullopt;
  return hits / static_cast<double>(n);
}

double EvalReport::mean_nfmr() const { return mean_of(per_pair, [](const PairMetrics& m) { return m.nfmr; }); }

FlowMetrics EvalReport::mean_flow() const {
  return {mean_of(per_pair, [](const PairMetrics& m) { return m.epe; }),
          mean_of(per_pair, [](const PairMetrics& m) { return m.acc_s; }),
          mean_of(per_pair, [](const PairMetrics& m) { return m.acc_r; }),
          mean_of(per_pair, [](const PairMetrics& m) { return m.outlier; })};
}

nlohmann::json EvalReport::to_json() const {
  using nlohmann::json;
  json out;
  out["per_pair"] = json::array();
  for (const auto& m : per_pair) {
    json j;
    j["name"] = m.name;
    j["ir"] = m.ir;
    j["fmr_hit"] = m.fmr_hit;
    j["rr_hit"] = m.rr_hit ? json(*m.rr_hit) : json(nullptr);
    j["rmse"] = m.rmse ? json(*m.rmse) : json(nullptr);
    j["rotation_error"] = m.rotation_error;
    j["translation_error"] = m.translation_error;
    j["nfmr"] = m.nfmr;
    j["epe"] = m.epe;
    j["acc_s"] = m.acc_s;
    j["acc_r"] = m.acc_r;
    j["outlier"] = m.outlier;
    j["n_pred"] = m.n_pred;
    out["per_pair"].push_back(j);
  }
  const FlowMetrics fm = mean_flow();
  const auto rr_value = rr();
  out["aggregate"] = {{"pairs", per_pair.size()}, {"ir", mean_ir()},   {"fmr", fmr()},
                      {"rr", rr_value ? json(*rr_value) : json(nullptr)},
                      {"nfmr", mean_nfmr()},      {"epe", fm.epe},     {"acc_s", fm.acc_s},
                      {"acc_r", fm.acc_r},        {"outlier", fm.outlier}};
  out["thresholds"] = {{"sigma", thresholds.sigma ? json(*thresholds.sigma) : json("per-pair")},
                       {"fmr_ir", thresholds.fmr_ir},
                       {"rr_rmse", thresholds.rr_rmse},
                       {"flow",
                        {{"strict_abs", thresholds.flow.strict_abs},
                         {"strict_rel", thresholds.flow.strict_rel},
                         {"relaxed_abs", thresholds.flow.relaxed_abs},
                         {"relaxed_rel", thresholds.flow.relaxed_rel},
                         {"outlier_abs", thresholds.flow.outlier_abs},
                         {"outlier_rel", thresholds.flow.outlier_rel}}}};
  return out;
}

void EvalReport::write_json(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "name,ir,fmr_hit,rr_hit,rmse,rotation_error,translation_error,nfmr,epe,acc_s,acc_r,outlier,n_pred\n";
  for (const auto& m : per_pair) {
    out << m.name << ',' << num(m.ir) << ',' << (m.fmr_hit ? 1 : 0) << ',' << (m.rr_hit ? (*m.rr_hit ? "1" : "0") : "")
        << ',' << (m.rmse ? num(*m.rmse) : "") << ',' << num(m.rotation_error) << ',' << num(m.translation_error) << ','
        << num(m.nfmr) << ',' << num(m.epe) << ',' << num(m.acc_s) << ',' << num(m.acc_r) << ',' << num(m.outlier)
        << ',' << m.n_pred << '\n';
  }
  const FlowMetrics fm = mean_flow();
  const auto rr_value = rr();
  out << "aggregate," << num(mean_ir()) << ',' << num(fmr()) << ',' << (rr_value ? num(*rr_value) : "") << ",,,,"
      << num(mean_nfmr()) << ',' << num(fm.epe) << ',' << num(fm.acc_s) << ',' << num(fm.acc_r) << ','
      << num(fm.outlier) << ",\n";
}

}  // namespace matchdiff
