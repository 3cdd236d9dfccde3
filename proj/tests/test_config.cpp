#include <doctest.h>

#include <string>

#include "matchdiff/config.hpp"
#include "matchdiff/error.hpp"

using namespace matchdiff;
using nlohmann::json;

namespace {

std::string config_error(const json& doc) {
  try {
    parse_run_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("defaults") {
  const RunConfig cfg = parse_run_config(json::object());
  CHECK(cfg.schedule.total_steps == 1000);
  CHECK(cfg.denoiser.d_model == DenoiserConfig{}.d_model);
  CHECK(cfg.encoder.d_model == cfg.denoiser.d_model);
  CHECK(cfg.sample.steps == SampleConfig{}.steps);
  CHECK_FALSE(cfg.data.sigma.has_value());
}

TEST_CASE("round trip") {
  const json doc = {
      {"seed", 17},
      {"schedule", {{"T", 200}, {"beta_start", 2e-4}, {"beta_end", 0.03}}},
      {"denoiser", {{"d_model", 24}, {"n_layers", 1}, {"marginals", "exact"}, {"procrustes_mutual", true}}},
      {"encoder", {{"neighbors", 5}, {"voxel_size", 0.1}}},
      {"train", {{"epochs", 3}, {"adam_betas", {0.8, 0.99}}, {"loss_weights", {{"warping", 0.5}}}}},
      {"sample", {{"init_mode", "backbone"}, {"steps", 7}, {"eta", 0.3}, {"formula", "paper_literal"}}},
      {"data", {{"sigma", 0.2}}},
  };
  const RunConfig cfg = parse_run_config(doc);
  CHECK(cfg.seed == 17);
  CHECK(cfg.train.seed == 17);
  CHECK(cfg.schedule.total_steps == 200);
  CHECK(cfg.denoiser.inner_marginals == Marginals::exact);
  CHECK(cfg.encoder.d_model == 24);
  CHECK(cfg.train.beta1 == 0.8);
  CHECK(cfg.train.loss_weights.warping == 0.5);
  CHECK(cfg.sample.init_mode == InitMode::backbone);
  CHECK(cfg.sample.formula == DdimFormula::paper_literal);
  CHECK(cfg.data.sigma == 0.2);

  const json back = to_json(cfg);
  CHECK(to_json(parse_run_config(back)) == back);
}

TEST_CASE("diffusion keys in the schedule section") {
  const RunConfig cfg = parse_run_config({{"schedule", {{"steps", 12}, {"eta", 0.5}}}});
  CHECK(cfg.sample.steps == 12);
  CHECK(cfg.sample.eta == 0.5);
  CHECK_FALSE(config_error({{"schedule", {{"steps", 12}}}, {"sample", {{"steps", 12}}}}).size());
  CHECK(config_error({{"schedule", {{"steps", 12}}}, {"sample", {{"steps", 10}}}}).size());
}

TEST_CASE("all bad keys are reported together") {
  const std::string msg = config_error({
      {"denoiser", {{"d_modle", 24}}},
      {"train", {{"epochs", "ten"}}},
      {"bogus", 1},
  });
  CHECK(msg.find("denoiser.d_modle") != std::string::npos);
  CHECK(msg.find("train.epochs") != std::string::npos);
  CHECK(msg.find("bogus") != std::string::npos);
}

TEST_CASE("value invariants") {
  CHECK(config_error({{"denoiser", {{"d_model", 64}}}}).size());
  CHECK(config_error({{"sample", {{"steps", 2000}}}}).size());
  CHECK(config_error({{"sample", {{"init_mode", "noise"}}}}).size());
  CHECK(config_error({{"encoder", {{"d_model", 12}}}}).size());
  CHECK(config_error(json::array()).size());
}
