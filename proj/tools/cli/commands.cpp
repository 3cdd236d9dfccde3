#include "cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "matchdiff/config.hpp"
#include "matchdiff/error.hpp"
#include "matchdiff/metrics.hpp"

#ifndef MATCHDIFF_VERSION
#define MATCHDIFF_VERSION "unknown"
#endif

namespace matchdiff::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void progress(const std::string& line) { std::cerr << line << '\n'; }

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

void ensure_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw DataError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) throw DataError(dir.string() + " is not empty (use --force to write into it)");
  } else {
    fs::create_directories(dir);
  }
}

struct RunManifest {
  std::string command;
  json config;
  std::uint64_t seed = 0;
  std::string started = utc_now();
  std::vector<std::string> outputs;

  void write(const fs::path& dir) {
    outputs.push_back("run_manifest.json");
    const json j = {{"command", command}, {"config", config},           {"seed", seed},
                    {"version", MATCHDIFF_VERSION}, {"started", started}, {"finished", utc_now()},
                    {"outputs", outputs}};
    write_json(dir / "run_manifest.json", j);
  }
};

// ---------------------------------------------------------------------------
// Checkpoints carry their architecture and defaults in a JSON sidecar.

fs::path sidecar(const fs::path& ckpt) { return fs::path(ckpt.string() + ".json"); }

struct LoadedModel {
  RunConfig config;
  Model model;
};

LoadedModel load_model(const fs::path& ckpt) {
  if (!fs::exists(ckpt)) throw DataError("checkpoint " + ckpt.string() + " not found");
  if (!fs::exists(sidecar(ckpt))) throw DataError("checkpoint config " + sidecar(ckpt).string() + " not found");
  LoadedModel lm{load_run_config(sidecar(ckpt)), {}};
  lm.model = init_model(lm.config.denoiser, lm.config.encoder, lm.config.seed);
  const ParameterStore stored = load_checkpoint(ckpt);
  for (const auto& [name, _] : lm.model.params)
    if (!stored.contains(name)) throw DataError("checkpoint " + ckpt.string() + " lacks tensor " + name);
  if (stored.size() != lm.model.params.size())
    throw DataError("checkpoint " + ckpt.string() + " holds tensors the configured model does not use");
  lm.model.params.load_values(stored);
  return lm;
}

// ---------------------------------------------------------------------------
// Prediction directories: transforms.json plus one correspondence CSV per pair.

std::string corr_file(const std::string& name) { return name + "_corr.csv"; }

json transform_json(const RigidTransform& rt) {
  json m = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m.push_back(c < 3 ? rt.rotation(r, c) : rt.translation(r));
  return m;
}

RigidTransform transform_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 12) throw DataError(what + ": transform must be 12 numbers (row-major 3x4)");
  RigidTransform rt;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) {
      const json& v = j[static_cast<std::size_t>(r * 4 + c)];
      if (!v.is_number()) throw DataError(what + ": transform entries must be numbers");
      (c < 3 ? rt.rotation(r, c) : rt.translation(r)) = v.get<double>();
    }
  return rt;
}

struct Prediction {
  std::string name;
  RigidTransform transform;
  std::vector<Match> matches;
};

std::vector<std::string> write_predictions(const fs::path& dir, std::span<const ScenePair> pairs,
                                           std::span<const SampleResult> results, const json& meta) {
  std::vector<std::string> outputs;
  json entries = json::array();
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const ScenePair& pair = pairs[k];
    const SampleResult& res = results[k];
    std::vector<CorrespondenceRow> rows;
    for (const auto& m : res.correspondences) rows.push_back({m.src, m.tgt, m.score});
    save_correspondences(dir / corr_file(pair.name), rows);
    outputs.push_back(corr_file(pair.name));

    PointCloud warped = pair.src + predicted_flow(pair, res.correspondences, res.registration);
    save_ply(dir / (pair.name + "_warped.ply"), warped);
    outputs.push_back(pair.name + "_warped.ply");

    entries.push_back({{"name", pair.name},
                       {"correspondences", corr_file(pair.name)},
                       {"transform", transform_json(res.registration)},
                       {"soft_procrustes", transform_json(res.transform)},
                       {"degenerate_steps", res.degenerate_steps}});
  }
  write_json(dir / "transforms.json", {{"schema", 1}, {"sample", meta}, {"pairs", entries}});
  outputs.push_back("transforms.json");
  return outputs;
}

std::vector<Prediction> load_predictions(const fs::path& dir) {
  const fs::path path = dir / "transforms.json";
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.contains("pairs") || !doc["pairs"].is_array()) throw DataError(path.string() + ": missing pairs array");
  std::vector<Prediction> out;
  for (const auto& e : doc["pairs"]) {
    if (!e.contains("name") || !e.contains("transform") || !e.contains("correspondences"))
      throw DataError(path.string() + ": entries need name, transform and correspondences");
    Prediction p;
    p.name = e["name"].get<std::string>();
    p.transform = transform_from_json(e["transform"], path.string() + " " + p.name);
    for (const auto& row : load_correspondences(dir / e["correspondences"].get<std::string>()))
      p.matches.push_back({row.src, row.tgt, row.score});
    out.push_back(std::move(p));
  }
  return out;
}

EvalReport evaluate(std::span<const ScenePair> pairs, std::span<const Prediction> preds, const MetricThresholds& th,
                    int threads) {
  if (pairs.size() != preds.size())
    throw DataError("prediction count " + std::to_string(preds.size()) + " does not match dataset pair count " +
                    std::to_string(pairs.size()));
  EvalReport rep;
  rep.thresholds = th;
  rep.per_pair.resize(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k)
    if (pairs[k].name != preds[k].name)
      throw DataError("prediction " + preds[k].name + " does not match dataset pair " + pairs[k].name);
  parallel_for(pairs.size(), threads, [&](std::size_t k) {
    for (const auto& m : preds[k].matches)
      if (m.src < 0 || m.src >= pairs[k].src.rows() || m.tgt < 0 || m.tgt >= pairs[k].tgt.rows())
        throw DataError("prediction " + preds[k].name + " references a point outside the clouds");
    rep.per_pair[k] = evaluate_pair(pairs[k], preds[k].matches, preds[k].transform, th);
  });
  return rep;
}

json sample_meta(const SampleConfig& sc, std::uint64_t seed) {
  return {{"init_mode", to_string(sc.init_mode)}, {"steps", sc.steps}, {"eta", sc.eta},
          {"formula", to_string(sc.formula)},     {"top_k", sc.top_k}, {"mutual", sc.mutual},
          {"seed", seed}};
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int pairs = 20;
  std::string mode = "rigid";
  double overlap = 1.0;
  double overlap_max = -1.0;
  double noise = 0.0;
  int points = 128;
  int n_rbf = 4;
  double max_disp = 0.2;
  std::uint64_t seed = 0;
  bool force = false;
};

int cmd_synth(const SynthArgs& a) {
  if (a.pairs < 1) throw ConfigError("--pairs must be >= 1");
  if (a.mode != "rigid" && a.mode != "deform") throw ConfigError("--mode must be rigid or deform");
  const double hi = a.overlap_max < 0 ? a.overlap : a.overlap_max;
  if (!(a.overlap > 0.0 && a.overlap <= 1.0) || !(hi >= a.overlap && hi <= 1.0))
    throw ConfigError("overlap range must satisfy 0 < overlap <= overlap-max <= 1");
  ensure_output_dir(a.out, a.force);

  std::vector<ScenePair> pairs(static_cast<std::size_t>(a.pairs));
  const Rng root(a.seed);
  parallel_for(pairs.size(), default_threads(), [&](std::size_t k) {
    Rng rng = root.fork(k);
    const double overlap = a.overlap + (hi - a.overlap) * rng.uniform();
    const std::uint64_t seed = rng.next_u64();
    if (a.mode == "rigid") {
      RigidPairOptions o;
      o.n_points = a.points;
      o.overlap = overlap;
      o.noise_std = a.noise;
      pairs[k] = gen_rigid_pair(o, seed);
    } else {
      DeformablePairOptions o;
      o.n_points = a.points;
      o.overlap = overlap;
      o.n_rbf = a.n_rbf;
      o.max_disp = a.max_disp;
      pairs[k] = gen_deformable_pair(o, seed);
    }
    char name[32];
    std::snprintf(name, sizeof name, "pair_%04zu", k);
    pairs[k].name = name;
  });
  save_dataset(a.out, pairs);

  RunManifest man;
  man.command = "synth";
  man.seed = a.seed;
  man.config = {{"pairs", a.pairs}, {"mode", a.mode},   {"overlap", a.overlap}, {"overlap_max", hi},
                {"noise", a.noise}, {"points", a.points}, {"n_rbf", a.n_rbf},     {"max_disp", a.max_disp}};
  man.outputs.push_back("manifest.json");
  for (const auto& p : pairs) {
    man.outputs.push_back(p.name + "_src.ply");
    man.outputs.push_back(p.name + "_tgt.ply");
  }
  man.write(a.out);
  progress("synth: wrote " + std::to_string(pairs.size()) + " pairs to " + a.out);
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  bool force = false;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig cfg = a.config.empty() ? parse_run_config(json::object()) : load_run_config(a.config);
  const auto pairs = load_dataset(a.data);
  ensure_output_dir(a.out, a.force);
  const DiffusionSchedule s = cfg.schedule.build();
  Model model = init_model(cfg.denoiser, cfg.encoder, cfg.seed);

  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t steps_per_epoch = (pairs.size() + static_cast<std::size_t>(cfg.train.batch_size) - 1) /
                                      static_cast<std::size_t>(cfg.train.batch_size);
  const auto curve = train_model(model, pairs, s, cfg.train, default_threads(), [&](const LossRecord& r) {
    if ((static_cast<std::size_t>(r.step) + 1) % steps_per_epoch != 0) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[160];
    std::snprintf(buf, sizeof buf, "train: epoch %d/%d loss %.5f (simple %.5f) %.0fs", r.epoch + 1, cfg.train.epochs,
                  r.total, r.simple, secs);
    progress(buf);
  });

  const fs::path out(a.out);
  save_checkpoint(out / "model.ckpt", model.params);
  write_json(sidecar(out / "model.ckpt"), to_json(cfg));
  write_loss_curve(out / "loss_curve.csv", curve);

  RunManifest man;
  man.command = "train";
  man.config = to_json(cfg);
  man.seed = cfg.seed;
  man.outputs = {"model.ckpt", "model.ckpt.json", "loss_curve.csv"};
  man.write(out);
  return 0;
}

struct SampleArgs {
  std::string data;
  std::string ckpt;
  std::string out;
  std::optional<int> steps;
  std::optional<double> eta;
  std::optional<std::string> init;
  std::optional<std::string> formula;
  std::optional<int> top_k;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

SampleConfig sample_config(const RunConfig& cfg, const SampleArgs& a) {
  SampleConfig sc = cfg.sample;
  if (a.steps) sc.steps = *a.steps;
  if (a.eta) sc.eta = *a.eta;
  if (a.init) sc.init_mode = parse_init_mode(*a.init);
  if (a.formula) sc.formula = parse_formula(*a.formula);
  if (a.top_k) sc.top_k = *a.top_k;
  sc.validate();
  return sc;
}

int cmd_sample(const SampleArgs& a) {
  const LoadedModel lm = load_model(a.ckpt);
  const SampleConfig sc = sample_config(lm.config, a);
  const std::uint64_t seed = a.seed.value_or(lm.config.seed);
  const auto pairs = load_dataset(a.data);
  ensure_output_dir(a.out, a.force);
  const DiffusionSchedule s = lm.config.schedule.build();
  const auto results = sample_pairs(pairs, lm.model, s, sc, seed, default_threads());

  RunManifest man;
  man.command = "sample";
  man.config = to_json(lm.config);
  man.config["sample"] = sample_meta(sc, seed);
  man.seed = seed;
  man.outputs = write_predictions(a.out, pairs, results, sample_meta(sc, seed));
  man.write(a.out);
  progress("sample: " + std::to_string(pairs.size()) + " pairs, " + std::to_string(sc.steps) + " steps");
  return 0;
}

struct EvalArgs {
  std::string pred;
  std::string data;
  std::string out;
  std::optional<double> sigma;
};

fs::path csv_mirror(const fs::path& json_path) {
  fs::path p = json_path;
  return p.replace_extension(".csv");
}

int cmd_eval(const EvalArgs& a) {
  if (a.sigma && !(*a.sigma > 0.0)) throw ConfigError("--sigma must be > 0");
  const auto pairs = load_dataset(a.data);
  const auto preds = load_predictions(a.pred);
  MetricThresholds th;
  th.sigma = a.sigma;
  const EvalReport rep = evaluate(pairs, preds, th, default_threads());
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text_atomic(out, rep.to_json().dump(2) + "\n");
  rep.write_csv(csv_mirror(out));
  char buf[160];
  std::snprintf(buf, sizeof buf, "eval: %zu pairs, IR %.4f FMR %.4f", rep.per_pair.size(), rep.mean_ir(), rep.fmr());
  progress(buf);
  return 0;
}

struct AblateArgs {
  std::string data;
  std::string ckpt;
  std::string sweep;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

struct SweepPoint {
  std::string label;
  SampleConfig cfg;
};

std::vector<SweepPoint> parse_sweep(const std::string& spec, const SampleConfig& base) {
  const auto eq = spec.find('=');
  const std::string key = spec.substr(0, eq);
  std::vector<std::string> values;
  if (eq != std::string::npos) {
    std::stringstream ss(spec.substr(eq + 1));
    for (std::string v; std::getline(ss, v, ',');)
      if (!v.empty()) values.push_back(v);
  }
  auto number = [&](const std::string& v) {
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size()) throw ConfigError("sweep value '" + v + "' is not a number");
    return d;
  };

  std::vector<SweepPoint> out;
  if (key == "steps") {
    if (values.empty()) values = {"1", "2", "3", "10", "20", "50"};
    for (const auto& v : values) {
      const double d = number(v);
      if (d != static_cast<int>(d)) throw ConfigError("steps sweep value '" + v + "' is not an integer");
      SweepPoint p{v, base};
      p.cfg.steps = static_cast<int>(d);
      out.push_back(p);
    }
  } else if (key == "init") {
    if (values.empty()) values = {"gaussian", "backbone"};
    for (const auto& v : values) {
      SweepPoint p{v, base};
      p.cfg.init_mode = parse_init_mode(v);
      out.push_back(p);
    }
  } else if (key == "eta") {
    if (values.empty()) values = {"0", "0.5", "1"};
    for (const auto& v : values) {
      SweepPoint p{v, base};
      p.cfg.eta = number(v);
      out.push_back(p);
    }
  } else {
    throw ConfigError("unknown sweep key '" + key + "' (expected steps, init or eta)");
  }
  for (const auto& p : out) p.cfg.validate();
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int cmd_ablate(const AblateArgs& a) {
  const LoadedModel lm = load_model(a.ckpt);
  const auto points = parse_sweep(a.sweep, lm.config.sample);
  const std::uint64_t seed = a.seed.value_or(lm.config.seed);
  const auto pairs = load_dataset(a.data);
  ensure_output_dir(a.out, a.force);
  const DiffusionSchedule s = lm.config.schedule.build();
  const int threads = default_threads();
  MetricThresholds th;
  th.sigma = lm.config.data.sigma;

  const std::string key = a.sweep.substr(0, a.sweep.find('='));
  std::ostringstream csv;
  csv << "sweep,value,pairs,ir,fmr,rr,nfmr,epe,acc_s,acc_r,outlier\n";
  json rows = json::array();
  RunManifest man;
  for (const auto& pt : points) {
    if (pt.cfg.steps > s.steps) throw ConfigError("sweep steps=" + pt.label + " exceeds schedule T");
    const auto results = sample_pairs(pairs, lm.model, s, pt.cfg, seed, threads);
    std::vector<Prediction> preds;
    for (std::size_t k = 0; k < pairs.size(); ++k) preds.push_back({pairs[k].name, results[k].registration, results[k].correspondences});
    const EvalReport rep = evaluate(pairs, preds, th, threads);
    const FlowMetrics fm = rep.mean_flow();
    const auto rr = rep.rr();
    csv << key << ',' << pt.label << ',' << pairs.size() << ',' << fmt(rep.mean_ir()) << ',' << fmt(rep.fmr()) << ','
        << (rr ? fmt(*rr) : "") << ',' << fmt(rep.mean_nfmr()) << ',' << fmt(fm.epe) << ',' << fmt(fm.acc_s) << ','
        << fmt(fm.acc_r) << ',' << fmt(fm.outlier) << '\n';
    json row = rep.to_json()["aggregate"];
    row["sweep"] = key;
    row["value"] = pt.label;
    row["sample"] = sample_meta(pt.cfg, seed);
    rows.push_back(row);
    progress("ablate: " + key + "=" + pt.label + " IR " + fmt(rep.mean_ir()));
  }
  write_text_atomic(fs::path(a.out) / "ablation.csv", csv.str());
  write_json(fs::path(a.out) / "ablation.json", {{"sweep", key}, {"rows", rows}});

  man.command = "ablate";
  man.config = to_json(lm.config);
  man.config["sweep"] = a.sweep;
  man.seed = seed;
  man.outputs = {"ablation.csv", "ablation.json"};
  man.write(a.out);
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& err) {
  CLI::App app{"Diffusion search for point-cloud matching matrices", "matchdiff"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MATCHDIFF_VERSION);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset of scene pairs");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--pairs", synth.pairs, "Number of pairs");
  s->add_option("--mode", synth.mode, "rigid or deform")->check(CLI::IsMember({"rigid", "deform"}));
  s->add_option("--overlap", synth.overlap, "Overlap ratio (lower bound when --overlap-max is set)");
  s->add_option("--overlap-max", synth.overlap_max, "Upper bound of a uniform overlap range");
  s->add_option("--noise", synth.noise, "Gaussian jitter on target points, meters");
  s->add_option("--points", synth.points, "Points per cloud");
  s->add_option("--n-rbf", synth.n_rbf, "Deformable: number of RBF bumps");
  s->add_option("--max-disp", synth.max_disp, "Deformable: bump amplitude bound, meters");
  s->add_option("--seed", synth.seed, "Seed");
  s->add_flag("--force", synth.force, "Write into a non-empty directory");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train encoder and denoiser");
  t->add_option("--data", train.data, "Dataset directory")->required();
  t->add_option("--config", train.config, "Run config JSON");
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_flag("--force", train.force, "Write into a non-empty directory");

  SampleArgs sample;
  auto* sm = app.add_subcommand("sample", "Reverse-sample matching matrices");
  sm->add_option("--data", sample.data, "Dataset directory")->required();
  sm->add_option("--ckpt", sample.ckpt, "Checkpoint file")->required();
  sm->add_option("--out", sample.out, "Output directory")->required();
  sm->add_option("--steps", sample.steps, "Reverse steps");
  sm->add_option("--eta", sample.eta, "Stochasticity in [0, 1]");
  sm->add_option("--init", sample.init, "gaussian or backbone");
  sm->add_option("--formula", sample.formula, "standard or paper_literal");
  sm->add_option("--top-k", sample.top_k, "Correspondences kept per pair");
  sm->add_option("--seed", sample.seed, "Seed (defaults to the training seed)");
  sm->add_flag("--force", sample.force, "Write into a non-empty directory");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score predictions against ground truth");
  e->add_option("--pred", eval.pred, "Prediction directory from `sample`")->required();
  e->add_option("--data", eval.data, "Dataset directory")->required();
  e->add_option("--out", eval.out, "Metrics JSON path; a CSV mirror is written beside it")->required();
  e->add_option("--sigma", eval.sigma, "Inlier threshold override, meters");

  AblateArgs ablate;
  auto* ab = app.add_subcommand("ablate", "Sweep one sampling setting and tabulate metrics");
  ab->add_option("--data", ablate.data, "Dataset directory")->required();
  ab->add_option("--ckpt", ablate.ckpt, "Checkpoint file")->required();
  ab->add_option("--sweep", ablate.sweep, "steps=1,2,3,10,20,50 | init | eta[=0,0.5,1]")->required();
  ab->add_option("--out", ablate.out, "Output directory")->required();
  ab->add_option("--seed", ablate.seed, "Seed (defaults to the training seed)");
  ab->add_flag("--force", ablate.force, "Write into a non-empty directory");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    if (ex.get_exit_code() == 0) {
      std::cout << (dynamic_cast<const CLI::CallForVersion*>(&ex) ? std::string(MATCHDIFF_VERSION) + "\n"
                                                                   : app.help(app.get_subcommands().empty()
                                                                                  ? ""
                                                                                  : app.get_subcommands().front()->get_name()));
      return 0;
    }
    err << "ERROR:" << static_cast<int>(ErrorCode::config) << ":usage: " << one_line(ex.what()) << '\n';
    return static_cast<int>(ErrorCode::config);
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(train);
    if (sm->parsed()) return cmd_sample(sample);
    if (e->parsed()) return cmd_eval(eval);
    if (ab->parsed()) return cmd_ablate(ablate);
  } catch (const Error& ex) {
    err << "ERROR:" << static_cast<int>(ex.code()) << ":" << one_line(ex.what()) << '\n';
    return static_cast<int>(ex.code());
  } catch (const fs::filesystem_error& ex) {
    err << "ERROR:" << static_cast<int>(ErrorCode::data) << ":" << one_line(ex.what()) << '\n';
    return static_cast<int>(ErrorCode::data);
  } catch (const nlohmann::json::exception& ex) {
    err << "ERROR:" << static_cast<int>(ErrorCode::data) << ":" << one_line(ex.what()) << '\n';
    return static_cast<int>(ErrorCode::data);
  } catch (const std::exception& ex) {
    err << "ERROR:" << static_cast<int>(ErrorCode::numeric) << ":" << one_line(ex.what()) << '\n';
    return static_cast<int>(ErrorCode::numeric);
  }
  return 0;
}

}  // namespace matchdiff::cli
