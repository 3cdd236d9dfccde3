// Acceptance run: one PASS/FAIL line per criterion, measured values alongside.
//
//   matchdiff_acceptance <path-to-matchdiff-cli> [output-dir] [--quick]
//
// --quick skips the training-based criteria 5-7.
// Criterion 5 trains the default toy model on 500 synthetic rigid pairs and
// takes roughly 20 minutes on a single core; everything else is quick.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "matchdiff/config.hpp"
#include "matchdiff/log.hpp"
#include "matchdiff/metrics.hpp"
#include "support/oracles.hpp"

using namespace matchdiff;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Verdict> verdicts;
json summary;

void report(int id, bool pass, const std::string& detail) {
  verdicts.push_back({id, pass, detail});
  std::printf("CRITERION %d %s: %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

PointCloud random_cloud(Index n, Rng& rng, double half = 1.5) {
  PointCloud p(n, 3);
  for (Index i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = rng.uniform(-half, half);
  return p;
}

// ---------------------------------------------------------------------------

void sinkhorn_correctness() {
  double worst_sum = 0, worst_idem = 0, worst_oracle = 0, elapsed = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    MatchMatrix m(32, 32);
    for (Index k = 0; k < m.size(); ++k) m(k) = rng.uniform(0.01, 1.0);
    const auto t0 = Clock::now();
    const MatchMatrix p = sinkhorn_project(m, 30, Marginals::exact);
    elapsed += seconds_since(t0);
    worst_sum = std::max({worst_sum, (p.rowwise().sum().array() - 1).abs().maxCoeff(),
                          (p.colwise().sum().array() - 1).abs().maxCoeff()});
    worst_idem = std::max(worst_idem, (sinkhorn_project(p, 30, Marginals::exact) - p).cwiseAbs().maxCoeff());
    worst_oracle = std::max(worst_oracle, (p - oracle::sinkhorn_linear(m, 30)).cwiseAbs().maxCoeff());
  }
  const double ms = elapsed / 100 * 1e3;
  summary["sinkhorn"] = {{"max_marginal_error", worst_sum}, {"max_idempotence_error", worst_idem},
                         {"max_oracle_error", worst_oracle}, {"ms_per_matrix", ms}};
  report(1, worst_sum <= 1e-6 && worst_idem <= 1e-6 && worst_oracle <= 1e-9 && ms < 5.0,
         fmt("marginals %.2e, idempotence %.2e, oracle %.2e, %.3f ms/matrix", worst_sum, worst_idem, worst_oracle, ms));
}

void procrustes_recovery() {
  double worst_rot = 0, worst_trans = 0, worst_det = 0;
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    PointCloud p = random_cloud(32, rng);
    if (trial % 2) p.col(2) *= 1e-6;  // near-planar
    const RigidTransform gt{random_rotation(rng), Eigen::Vector3d(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2))};
    const PointCloud q = rigid_warp(p, gt);
    const RigidTransform rt = soft_procrustes(MatchMatrix::Identity(32, 32), p, q, 32);
    const TransformError e = transform_error(rt, gt);
    worst_rot = std::max(worst_rot, e.rotation);
    worst_trans = std::max(worst_trans, e.translation);
    worst_det = std::max(worst_det, std::abs(rt.rotation.determinant() - 1.0));
  }
  summary["procrustes"] = {{"max_rotation_error", worst_rot}, {"max_translation_error", worst_trans},
                           {"max_det_deviation", worst_det}};
  report(2, worst_rot < 1e-9 && worst_trans < 1e-9 && worst_det < 1e-12,
         fmt("rotation %.2e rad, translation %.2e m, |det - 1| %.2e (half near-planar)", worst_rot, worst_trans, worst_det));
}

void gradient_suite() {
  DenoiserConfig cfg;
  cfg.d_model = 12;
  cfg.n_layers = 1;
  cfg.procrustes_k = 8;
  json worst = json::object();
  bool pass = true;
  auto track = [&](const std::string& name, double err, double tol) {
    worst[name] = std::max(worst.value(name, 0.0), err);
    pass = pass && err < tol;
  };

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(500 + seed);
    ParameterStore ps;
    init_denoiser_params(ps, cfg, rng);
    for (auto& [n, t] : ps) t.mutable_value() += 0.3 * rng.normal_matrix(t.rows(), t.cols());
    const PointCloud p = random_cloud(6, rng, 1.0), q = random_cloud(6, rng, 1.0);
    const RotaryEncoding rp = rotary_encode(p, cfg), rq = rotary_encode(q, cfg);
    const Matrix fp = rng.normal_matrix(6, 12), fq = rng.normal_matrix(6, 12);
    const Tensor w = Tensor::constant(rng.normal_matrix(6, 12));
    const Tensor w66 = Tensor::constant(rng.normal_matrix(6, 6));

    track("attention_layer",
          oracle::grad_check([&](const Tensor& x) { return sum(mul(attention_layer(x, Tensor::constant(fq), rp, rq, ps, layer_prefix(1)), w)); }, fp),
          1e-4);
    track("matching_logits",
          oracle::grad_check([&](const Tensor& x) {
            return sum(mul(matching_logits(x, Tensor::constant(fq), rp, rq, ps.at("denoiser.match.wp"), ps.at("denoiser.match.wq")), w66));
          }, fp),
          1e-4);

    Matrix probs(6, 6);
    for (Index k = 0; k < probs.size(); ++k) probs(k) = rng.uniform(0.05, 0.95);
    MatchMatrix target = MatchMatrix::Zero(6, 6);
    for (Index i = 0; i < 6; ++i) target(i, (i + seed) % 6) = 1.0;
    track("focal_loss", oracle::grad_check([&](const Tensor& x) { return focal_loss(x, target, 2.0, 0.25, 5.0); }, probs), 1e-4);

    const Matrix logits = rng.normal_matrix(6, 6);
    for (Marginals mode : {Marginals::exact, Marginals::relaxed})
      track("sinkhorn_log", oracle::grad_check([&](const Tensor& x) { return sum(mul(sinkhorn_log(x, 10, mode), w66)); }, logits), 1e-4);

    // Full g_theta; the Procrustes warp depends on e_t only and carries no gradient.
    const MatchMatrix et = rng.normal_matrix(6, 6);
    track("g_theta",
          oracle::grad_check([&](const Tensor& x) {
            return focal_loss(g_theta(et, p, q, x, Tensor::constant(fq), ps, cfg).e0_hat, target, 2.0, 0.25, 5.0);
          }, fp),
          1e-3);
    for (const std::string& name : {std::string("denoiser.match.wq"), layer_prefix(0) + "wk"}) {
      track("g_theta",
            oracle::grad_check([&](const Tensor& x) {
              ParameterStore local = ps.snapshot();
              for (auto& [n, t] : local)
                if (n == name) t = x;
              return focal_loss(g_theta(et, p, q, Tensor::constant(fp), Tensor::constant(fq), local, cfg).e0_hat, target,
                                2.0, 0.25, 5.0);
            }, ps.at(name).value()),
            1e-3);
    }
  }
  summary["gradients"] = worst;
  std::string detail;
  for (const auto& [k, v] : worst.items()) detail += (detail.empty() ? "" : ", ") + k + " " + fmt("%.1e", v.get<double>());
  report(3, pass, "20 seeds, worst relative error: " + detail);
}

void oracle_chain() {
  const auto s = linear_beta_schedule(1000, 1e-4, 0.02);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    RigidPairOptions opt;
    opt.n_points = 32;
    const ScenePair pair = gen_rigid_pair(opt, 900 + seed);
    const DenoiseFn emit = [&](const MatchMatrix&, int) { return pair.gt_matrix; };
    const MatchMatrix e0 = run_reverse_chain(rng.normal_matrix(32, 32), emit, s, make_tau(1000, 20, 0.0),
                                             DdimFormula::standard, rng);
    worst = std::max(worst, (e0 - pair.gt_matrix).cwiseAbs().maxCoeff());
  }
  summary["oracle_chain"] = {{"max_entry_error", worst}};
  report(4, worst <= 1e-5, fmt("20 of 1000 steps, eta 0: max |E0_hat - E0| = %.2e over 10 chains", worst));
}

// ---------------------------------------------------------------------------
// Criteria 5-7 share one trained model.

struct Eval {
  double ir = 0;
  std::optional<double> rr;
  double rr_soft = 0;
};

Eval evaluate_model(std::span<const ScenePair> pairs, const Model& model, const DiffusionSchedule& s, SampleConfig cfg,
                    std::uint64_t seed) {
  const auto results = sample_pairs(pairs, model, s, cfg, seed, default_threads());
  EvalReport rep, soft;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    rep.per_pair.push_back(evaluate_pair(pairs[k], results[k].correspondences, results[k].registration));
    soft.per_pair.push_back(evaluate_pair(pairs[k], results[k].correspondences, results[k].transform));
  }
  return {rep.mean_ir(), rep.rr(), soft.rr().value_or(0.0)};
}

std::vector<ScenePair> rigid_set(std::size_t count, std::uint64_t seed) {
  std::vector<ScenePair> out(count);
  const Rng root(seed);
  parallel_for(count, default_threads(), [&](std::size_t k) {
    Rng rng = root.fork(k);
    RigidPairOptions opt;
    opt.n_points = 128;
    opt.overlap = rng.uniform(0.6, 1.0);
    opt.noise_std = 0.005;
    out[k] = gen_rigid_pair(opt, rng.next_u64());
    out[k].name = fmt("pair_%04zu", k);
  });
  return out;
}

void trained_model_criteria(const fs::path& out_dir) {
  RunConfig cfg;  // toy model: d = 66, two (self, cross) rounds
  cfg.train.epochs = 20;
  cfg.train.seed = 2024;
  const auto s = cfg.schedule.build();

  const auto train = rigid_set(500, 101);
  const auto held_out = rigid_set(50, 202);
  Model model = init_model(cfg.denoiser, cfg.encoder, cfg.train.seed);

  SampleConfig sample = cfg.sample;  // 10 steps, eta 0, gaussian
  const Eval untrained = evaluate_model(held_out, model, s, sample, 7);

  const int threads = default_threads();
  const auto t0 = Clock::now();
  const auto curve = train_model(model, train, s, cfg.train, threads, [&](const LossRecord& r) {
    const std::size_t per_epoch = (train.size() + static_cast<std::size_t>(cfg.train.batch_size) - 1) /
                                  static_cast<std::size_t>(cfg.train.batch_size);
    if (static_cast<std::size_t>(r.step + 1) % per_epoch == 0)
      std::fprintf(stderr, "  epoch %d/%d  loss %.4f  %.0fs\n", r.epoch + 1, cfg.train.epochs, r.total, seconds_since(t0));
  });
  const double train_minutes = seconds_since(t0) / 60.0;
  write_loss_curve(out_dir / "loss_curve.csv", curve);
  save_checkpoint(out_dir / "model.ckpt", model.params);

  const Eval trained = evaluate_model(held_out, model, s, sample, 7);
  summary["training"] = {{"pairs", train.size()},     {"held_out", held_out.size()}, {"epochs", cfg.train.epochs},
                         {"threads", threads},         {"minutes", train_minutes},     {"untrained_ir", untrained.ir},
                         {"ir", trained.ir},           {"rr", trained.rr.value_or(0)}, {"rr_soft_procrustes", trained.rr_soft}};
  const double gain = trained.ir - untrained.ir;
  const double rr = trained.rr.value_or(0.0);
  report(5, train_minutes <= 30.0 && trained.ir >= 0.6 && gain >= 0.20 && rr >= 0.8,
         fmt("train %.1f min on %d thread(s); IR %.3f (untrained %.3f, +%.1f pts); RR %.2f (soft Procrustes alone %.2f)",
             train_minutes, threads, trained.ir, untrained.ir, 100 * gain, rr, trained.rr_soft));

  // Step-count sweep.
  std::ofstream csv(out_dir / "steps_sweep.csv");
  csv << "steps,ir,rr\n";
  json sweep = json::array();
  double ir1 = 0, ir20 = 0;
  for (int steps : {1, 2, 3, 10, 20, 50}) {
    SampleConfig sc = sample;
    sc.steps = steps;
    const Eval e = steps == 10 ? trained : evaluate_model(held_out, model, s, sc, 7);
    csv << steps << ',' << fmt("%.17g", e.ir) << ',' << fmt("%.17g", e.rr.value_or(0)) << '\n';
    sweep.push_back({{"steps", steps}, {"ir", e.ir}, {"rr", e.rr.value_or(0)}});
    if (steps == 1) ir1 = e.ir;
    if (steps == 20) ir20 = e.ir;
  }
  csv.close();
  summary["steps_sweep"] = sweep;
  std::string row;
  for (const auto& e : sweep) row += fmt("%d:%.3f ", e["steps"].get<int>(), e["ir"].get<double>());
  report(6, ir20 >= ir1 && fs::exists(out_dir / "steps_sweep.csv"),
         "IR by steps " + row + "(written to " + (out_dir / "steps_sweep.csv").string() + ")");

  // Parity is judged the way the reference comparison was run: stochastic (eta 1) reverse sampling over the
  // default 20 iterations. The deterministic gap is reported alongside.
  SampleConfig stochastic = sample;
  stochastic.steps = 20;
  stochastic.eta = 1.0;
  SampleConfig stochastic_bb = stochastic;
  stochastic_bb.init_mode = InitMode::backbone;
  SampleConfig deterministic_bb = sample;
  deterministic_bb.init_mode = InitMode::backbone;
  const Eval g20 = evaluate_model(held_out, model, s, stochastic, 7);
  const Eval b20 = evaluate_model(held_out, model, s, stochastic_bb, 7);
  const Eval b10 = evaluate_model(held_out, model, s, deterministic_bb, 7);
  summary["init_modes"] = {{"stochastic_20", {{"gaussian", g20.ir}, {"backbone", b20.ir}}},
                           {"deterministic_10", {{"gaussian", trained.ir}, {"backbone", b10.ir}}}};
  report(7, std::abs(b20.ir - g20.ir) <= 0.02,
         fmt("eta 1, 20 steps: IR gaussian %.3f vs backbone %.3f (|diff| %.1f pts)", g20.ir, b20.ir,
             100 * std::abs(b20.ir - g20.ir)));
  std::printf("note: deterministic 10-step IR gaussian %.3f vs backbone %.3f\n", trained.ir, b10.ir);

  // Supplementary: the trained denoiser keeps a ground-truth permutation.
  RigidPairOptions exact;
  exact.n_points = 128;
  const ScenePair pair = gen_rigid_pair(exact, 77);
  const EncodedCloud p = encode_cloud(pair.src, model), q = encode_cloud(pair.tgt, model);
  const auto out = g_theta(pair.gt_matrix, p.superpoints, q.superpoints, p.features, q.features, model.params, model.denoiser);
  std::size_t kept = 0;
  for (const auto& m : top_k_matches(out.e0_hat.value(), pair.gt_pairs.size(), false)) kept += pair.gt_matrix(m.src, m.tgt) > 0.5;
  const double frac = static_cast<double>(kept) / static_cast<double>(pair.gt_pairs.size());
  summary["gt_fixed_point"] = frac;
  std::printf("note: ground-truth permutation fed to the trained denoiser keeps %.1f%% of its pairs in top-k\n", 100 * frac);
}

// ---------------------------------------------------------------------------

void metric_oracles() {
  double worst = 0;
  bool rr_agree = true;
  Rng rng(31);
  for (int fixture = 0; fixture < 100; ++fixture) {
    std::vector<PointMatch> pred, gt;
    for (int k = 0; k < 10; ++k) {
      const Eigen::Vector3d a(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
      pred.push_back({a, a + 0.08 * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal())});
      const Eigen::Vector3d b(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
      gt.push_back({b, b + 0.05 * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal())});
    }
    const Eigen::Matrix3d r = random_rotation(rng);
    const Eigen::Vector3d t(rng.uniform(-0.1, 0.1), 0.0, rng.uniform(-0.1, 0.1));
    const WarpFn warp = [&](const Eigen::Vector3d& x) { return Eigen::Vector3d(r * x + t); };

    // Inlier ratio, written out.
    int inliers = 0;
    for (const auto& m : pred) {
      double d2 = 0;
      const Eigen::Vector3d w = r * m.p + t;
      for (int c = 0; c < 3; ++c) d2 += (w(c) - m.q(c)) * (w(c) - m.q(c));
      inliers += std::sqrt(d2) < 0.1;
    }
    worst = std::max(worst, std::abs(inlier_ratio(pred, warp, 0.1) - inliers / 10.0));

    // NFMR through a hand-rolled interpolation.
    std::vector<Eigen::Vector3d> anchors, flows;
    for (const auto& m : pred) {
      anchors.push_back(m.p);
      flows.push_back(m.q - m.p);
    }
    int hits = 0;
    for (const auto& m : gt) hits += (m.p + oracle::idw(m.p, anchors, flows, 3) - m.q).norm() < 0.04;
    worst = std::max(worst, std::abs(nfmr(gt, pred, 0.04) - hits / 10.0));

    // Registration decision.
    PointCloud pts(10, 3);
    for (int k = 0; k < 10; ++k) pts.row(k) = gt[static_cast<std::size_t>(k)].p.transpose();
    const RigidTransform gtr{r, t};
    const Eigen::Matrix3d tilt = Eigen::AngleAxisd(rng.uniform(0, 0.3), Eigen::Vector3d::UnitZ()).toRotationMatrix();
    const RigidTransform est{tilt * r, t + Eigen::Vector3d(rng.uniform(-0.2, 0.2), 0, 0)};
    double sq = 0;
    for (int k = 0; k < 10; ++k) {
      const Eigen::Vector3d x = pts.row(k).transpose();
      sq += (est.rotation * x + est.translation - r * x - t).squaredNorm();
    }
    worst = std::max(worst, std::abs(transform_rmse(est, gtr, pts) - std::sqrt(sq / 10)));
    rr_agree = rr_agree && registration_recall(est, gtr, pts) == (std::sqrt(sq / 10) < 0.2);

    // Flow metrics.
    PointCloud gf(10, 3), pf(10, 3);
    for (Index k = 0; k < 30; ++k) {
      gf(k) = 0.2 * rng.normal();
      pf(k) = gf(k) + 0.04 * rng.normal();
    }
    double epe = 0, acc_s = 0, acc_r = 0, outlier = 0;
    for (Index i = 0; i < 10; ++i) {
      const double e = (pf.row(i) - gf.row(i)).norm(), rel = e / gf.row(i).norm();
      epe += e;
      acc_s += e < 0.025 || rel < 0.025;
      acc_r += e < 0.05 || rel < 0.05;
      outlier += e > 0.3 || rel > 0.1;
    }
    const FlowMetrics fm = flow_metrics(pf, gf);
    worst = std::max({worst, std::abs(fm.epe - epe / 10), std::abs(fm.acc_s - acc_s / 10), std::abs(fm.acc_r - acc_r / 10),
                      std::abs(fm.outlier - outlier / 10)});
  }
  summary["metric_oracles"] = {{"max_error", worst}, {"rr_decisions_agree", rr_agree}};
  report(8, worst <= 1e-12 && rr_agree, fmt("100 ten-point fixtures: max deviation %.1e, RR decisions %s", worst, rr_agree ? "agree" : "differ"));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int shell(const std::string& cmd) { return std::system((cmd + " >/dev/null 2>&1").c_str()); }

void cli_determinism(const fs::path& cli, const fs::path& out_dir) {
  const fs::path root = out_dir / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  std::ofstream(root / "config.json") << R"({"seed": 5, "schedule": {"T": 200},
    "denoiser": {"d_model": 12, "n_layers": 1, "procrustes_k": 16},
    "train": {"epochs": 2, "batch_size": 2}, "sample": {"steps": 5, "eta": 0.5, "top_k": 16}})";
  const std::string exe = "\"" + cli.string() + "\"";
  auto q = [](const fs::path& p) { return "\"" + p.string() + "\""; };
  bool ok = true;
  for (const char* run : {"a", "b"}) {
    const fs::path d = root / run;
    ok = ok && shell(exe + " synth --out " + q(d / "data") + " --pairs 4 --points 32 --mode deform --seed 9") == 0;
    ok = ok && shell(exe + " train --data " + q(d / "data") + " --config " + q(root / "config.json") + " --out " + q(d / "run")) == 0;
    ok = ok && shell(exe + " sample --data " + q(d / "data") + " --ckpt " + q(d / "run" / "model.ckpt") + " --out " + q(d / "pred")) == 0;
    ok = ok && shell(exe + " eval --pred " + q(d / "pred") + " --data " + q(d / "data") + " --out " + q(d / "metrics.json")) == 0;
  }
  const std::string a = slurp(root / "a" / "metrics.json"), b = slurp(root / "b" / "metrics.json");
  const bool same = ok && !a.empty() && a == b;
  const bool same_ckpt = slurp(root / "a" / "run" / "model.ckpt") == slurp(root / "b" / "run" / "model.ckpt");
  summary["determinism"] = {{"commands_ok", ok}, {"metrics_identical", same}, {"checkpoint_identical", same_ckpt}};
  report(9, same, fmt("synth/train/sample/eval twice: commands %s, metrics JSON %s (%zu bytes), checkpoint %s", ok ? "ok" : "failed",
                      same ? "byte-identical" : "differs", a.size(), same_ckpt ? "identical" : "differs"));
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  const bool quick = std::erase(args, "--quick") > 0;
  if (args.empty()) {
    std::fprintf(stderr, "usage: %s <matchdiff-cli> [output-dir] [--quick]\n", argv[0]);
    return 2;
  }
  const fs::path cli = fs::absolute(args[0]);
  const fs::path out_dir = fs::absolute(args.size() > 1 ? args[1] : "acceptance_out");
  fs::create_directories(out_dir);
  set_log_sink([](const std::string&) {});

  const std::vector<std::pair<int, std::function<void()>>> steps{
      {1, sinkhorn_correctness},
      {2, procrustes_recovery},
      {3, gradient_suite},
      {4, oracle_chain},
      {5, [&] { trained_model_criteria(out_dir); }},
      {8, metric_oracles},
      {9, [&] { cli_determinism(cli, out_dir); }},
  };
  for (const auto& [id, fn] : steps) {
    if (quick && id == 5) {
      std::printf("criteria 5-7 skipped (--quick)\n");
      continue;
    }
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, false, std::string("threw: ") + e.what());
    }
  }

  std::ofstream(out_dir / "acceptance.json") << summary.dump(2) << '\n';
  int failed = 0;
  for (const auto& v : verdicts) failed += !v.pass;
  std::printf("%zu criteria checked, %d failed\n", verdicts.size(), failed);
  return failed ? 1 : 0;
}
