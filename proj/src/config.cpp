#include "matchdiff/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "matchdiff/error.hpp"

namespace matchdiff {

using nlohmann::json;

namespace {

// Reads typed fields from one JSON object and remembers what it saw so that
// unknown keys can be reported afterwards.
class Section {
 public:
  Section(const json& doc, std::string path, std::vector<std::string>& problems)
      : path_(std::move(path)), problems_(problems) {
    if (doc.is_null()) return;
    if (!doc.is_object()) {
      problems_.push_back((path_.empty() ? "config" : path_) + " (expected an object)");
      return;
    }
    obj_ = &doc;
  }

  bool has(const std::string& key) const { return obj_ && obj_->contains(key); }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const json& v = obj_->at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw std::invalid_argument("integer");
        if constexpr (std::is_unsigned_v<T>)
          if (!v.is_number_unsigned() && v.get<std::int64_t>() < 0) throw std::invalid_argument("non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("string");
      } else if constexpr (std::is_same_v<T, std::vector<double>>) {
        if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); }))
          throw std::invalid_argument("array of numbers");
      }
      out = v.get<T>();
    } catch (const std::invalid_argument& e) {
      problems_.push_back(qualified(key) + " (expected " + e.what() + ")");
    }
  }

  template <class T, class Parse>
  void get_enum(const std::string& key, T& out, Parse parse) {
    std::string s;
    if (!has(key)) {
      seen_.insert(key);
      return;
    }
    const std::size_t before = problems_.size();
    get(key, s);
    if (problems_.size() != before) return;
    try {
      out = parse(s);
    } catch (const ConfigError&) {
      problems_.push_back(qualified(key) + " (unknown value '" + s + "')");
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    return has(key) ? &obj_->at(key) : nullptr;
  }

  void finish() {
    if (!obj_) return;
    for (const auto& [key, _] : obj_->items())
      if (!seen_.contains(key)) problems_.push_back(qualified(key) + " (unknown key)");
  }

 private:
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* obj_ = nullptr;
  std::string path_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

const json kNull = nullptr;

const json& or_null(const json* p) { return p ? *p : kNull; }

}  // namespace

const char* to_string(InitMode m) { return m == InitMode::gaussian ? "gaussian" : "backbone"; }
const char* to_string(DdimFormula f) { return f == DdimFormula::standard ? "standard" : "paper_literal"; }
const char* to_string(Marginals m) { return m == Marginals::exact ? "exact" : "relaxed"; }

InitMode parse_init_mode(const std::string& s) {
  if (s == "gaussian") return InitMode::gaussian;
  if (s == "backbone") return InitMode::backbone;
  throw ConfigError("unknown init mode '" + s + "' (expected gaussian|backbone)");
}

DdimFormula parse_formula(const std::string& s) {
  if (s == "standard") return DdimFormula::standard;
  if (s == "paper_literal") return DdimFormula::paper_literal;
  throw ConfigError("unknown formula '" + s + "' (expected standard|paper_literal)");
}

Marginals parse_marginals(const std::string& s) {
  if (s == "exact") return Marginals::exact;
  if (s == "relaxed") return Marginals::relaxed;
  throw ConfigError("unknown marginals '" + s + "' (expected exact|relaxed)");
}

void RunConfig::validate() const {
  if (schedule.total_steps < 1) throw ConfigError("schedule.T must be >= 1");
  if (!(schedule.beta_start > 0.0 && schedule.beta_start <= schedule.beta_end && schedule.beta_end < 1.0))
    throw ConfigError("schedule requires 0 < beta_start <= beta_end < 1");
  denoiser.validate();
  encoder.validate();
  if (encoder.d_model != denoiser.d_model) throw ConfigError("encoder.d_model must equal denoiser.d_model");
  train.validate();
  sample.validate();
  if (sample.steps > schedule.total_steps) throw ConfigError("sample.steps must not exceed schedule.T");
  if (data.sigma && !(*data.sigma > 0.0)) throw ConfigError("data.sigma must be > 0");
}

RunConfig parse_run_config(const json& doc) {
  RunConfig cfg;
  std::vector<std::string> problems;
  Section root(doc, "", problems);

  Section sched(or_null(root.child("schedule")), "schedule", problems);
  sched.get("T", cfg.schedule.total_steps);
  sched.get("beta_start", cfg.schedule.beta_start);
  sched.get("beta_end", cfg.schedule.beta_end);
  // The schedule section may also carry the sampling chain settings; they
  // must agree with the sample section when both are given.
  SampleConfig from_schedule;
  sched.get("steps", from_schedule.steps);
  sched.get("eta", from_schedule.eta);
  sched.get_enum("formula", from_schedule.formula, parse_formula);
  sched.finish();

  Section den(or_null(root.child("denoiser")), "denoiser", problems);
  den.get("d_model", cfg.denoiser.d_model);
  den.get("n_layers", cfg.denoiser.n_layers);
  den.get("n_heads", cfg.denoiser.n_heads);
  den.get("rotary_freq_base", cfg.denoiser.rotary_freq_base);
  den.get("rotary_scale", cfg.denoiser.rotary_scale);
  den.get("sinkhorn_iters", cfg.denoiser.sinkhorn_iters_inner);
  den.get_enum("marginals", cfg.denoiser.inner_marginals, parse_marginals);
  den.get("procrustes_k", cfg.denoiser.procrustes_k);
  den.get("procrustes_mutual", cfg.denoiser.procrustes_mutual);
  den.finish();

  Section enc(or_null(root.child("encoder")), "encoder", problems);
  cfg.encoder.d_model = cfg.denoiser.d_model;
  enc.get("d_model", cfg.encoder.d_model);
  enc.get("neighbors", cfg.encoder.neighbors);
  enc.get("histogram_bins", cfg.encoder.histogram_bins);
  enc.get("histogram_radius", cfg.encoder.histogram_radius);
  enc.get("voxel_size", cfg.encoder.voxel_size);
  enc.finish();

  root.get("seed", cfg.seed);
  cfg.train.seed = cfg.seed;

  Section tr(or_null(root.child("train")), "train", problems);
  tr.get("epochs", cfg.train.epochs);
  tr.get("batch_size", cfg.train.batch_size);
  tr.get("learning_rate", cfg.train.learning_rate);
  if (const json* betas = tr.child("adam_betas")) {
    if (betas->is_array() && betas->size() == 2 && (*betas)[0].is_number() && (*betas)[1].is_number()) {
      cfg.train.beta1 = (*betas)[0].get<double>();
      cfg.train.beta2 = (*betas)[1].get<double>();
    } else {
      problems.push_back("train.adam_betas (expected [beta1, beta2])");
    }
  }
  tr.get("focal_gamma", cfg.train.focal_gamma);
  tr.get("focal_alpha", cfg.train.focal_alpha);
  tr.get("focal_pos_weight", cfg.train.focal_pos_weight);
  tr.get("seed", cfg.train.seed);
  tr.get("freeze_encoder", cfg.train.freeze_encoder);
  tr.get("symmetric_targets", cfg.train.symmetric_targets);
  tr.get("grad_clip", cfg.train.grad_clip);
  Section lw(or_null(tr.child("loss_weights")), "train.loss_weights", problems);
  lw.get("matching", cfg.train.loss_weights.matching);
  lw.get("warping", cfg.train.loss_weights.warping);
  lw.get("simple", cfg.train.loss_weights.simple);
  lw.finish();
  tr.finish();

  Section sm(or_null(root.child("sample")), "sample", problems);
  sm.get_enum("init_mode", cfg.sample.init_mode, parse_init_mode);
  sm.get("steps", cfg.sample.steps);
  sm.get("eta", cfg.sample.eta);
  sm.get_enum("formula", cfg.sample.formula, parse_formula);
  sm.get("top_k", cfg.sample.top_k);
  sm.get("mutual", cfg.sample.mutual);
  sm.get("refine_thresholds", cfg.sample.refine_thresholds);
  sm.get("refine_passes", cfg.sample.refine_passes);
  sm.finish();
  auto merge = [&](const char* key, auto& target, const auto& value) {
    if (!sched.has(key)) return;
    if (sm.has(key) && !(target == value)) {
      problems.push_back(std::string("schedule.") + key + " (disagrees with sample." + key + ")");
      return;
    }
    target = value;
  };
  merge("steps", cfg.sample.steps, from_schedule.steps);
  merge("eta", cfg.sample.eta, from_schedule.eta);
  merge("formula", cfg.sample.formula, from_schedule.formula);

  Section da(or_null(root.child("data")), "data", problems);
  if (const json* sigma = da.child("sigma"); sigma && !sigma->is_null()) {
    if (sigma->is_number())
      cfg.data.sigma = sigma->get<double>();
    else
      problems.push_back("data.sigma (expected number or null)");
  }
  da.finish();

  root.finish();

  if (!problems.empty()) {
    std::string msg = "invalid config keys: ";
    for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? ", " : "") + problems[i];
    throw ConfigError(msg);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

json to_json(const RunConfig& c) {
  json j;
  j["schedule"] = {{"T", c.schedule.total_steps},  {"beta_start", c.schedule.beta_start},
                   {"beta_end", c.schedule.beta_end}, {"steps", c.sample.steps},
                   {"eta", c.sample.eta},             {"formula", to_string(c.sample.formula)}};
  j["denoiser"] = {{"d_model", c.denoiser.d_model},
                   {"n_layers", c.denoiser.n_layers},
                   {"n_heads", c.denoiser.n_heads},
                   {"rotary_freq_base", c.denoiser.rotary_freq_base},
                   {"rotary_scale", c.denoiser.rotary_scale},
                   {"sinkhorn_iters", c.denoiser.sinkhorn_iters_inner},
                   {"marginals", to_string(c.denoiser.inner_marginals)},
                   {"procrustes_k", c.denoiser.procrustes_k},
                   {"procrustes_mutual", c.denoiser.procrustes_mutual}};
  j["encoder"] = {{"d_model", c.encoder.d_model},
                  {"neighbors", c.encoder.neighbors},
                  {"histogram_bins", c.encoder.histogram_bins},
                  {"histogram_radius", c.encoder.histogram_radius},
                  {"voxel_size", c.encoder.voxel_size}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"adam_betas", {c.train.beta1, c.train.beta2}},
                {"focal_gamma", c.train.focal_gamma},
                {"focal_alpha", c.train.focal_alpha},
                {"focal_pos_weight", c.train.focal_pos_weight},
                {"loss_weights",
                 {{"matching", c.train.loss_weights.matching},
                  {"warping", c.train.loss_weights.warping},
                  {"simple", c.train.loss_weights.simple}}},
                {"seed", c.train.seed},
                {"freeze_encoder", c.train.freeze_encoder},
                {"symmetric_targets", c.train.symmetric_targets},
                {"grad_clip", c.train.grad_clip}};
  j["sample"] = {{"init_mode", to_string(c.sample.init_mode)},
                 {"steps", c.sample.steps},
                 {"eta", c.sample.eta},
                 {"formula", to_string(c.sample.formula)},
                 {"top_k", c.sample.top_k},
                 {"mutual", c.sample.mutual},
                 {"refine_thresholds", c.sample.refine_thresholds},
                 {"refine_passes", c.sample.refine_passes}};
  j["data"] = {{"sigma", c.data.sigma ? json(*c.data.sigma) : json(nullptr)}};
  j["seed"] = c.seed;
  return j;
}

}  // namespace matchdiff
