#pragma once

// Run configuration: one JSON document
//   {schedule, denoiser, encoder, train, sample, data, seed}
// Every section and key is optional and falls back to the library default;
// unknown keys and wrongly typed values are rejected together in one error.

#include <cstdint>
#include <filesystem>
#include <optional>

#include <json.hpp>

#include "matchdiff/pipeline.hpp"

namespace matchdiff {

struct ScheduleConfig {
  int total_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  DiffusionSchedule build() const { return linear_beta_schedule(total_steps, beta_start, beta_end); }
};

struct DataConfig {
  std::optional<double> sigma;  // overrides per-pair sigma in evaluation
};

struct RunConfig {
  ScheduleConfig schedule;
  DenoiserConfig denoiser;
  EncoderConfig encoder;
  TrainConfig train;
  SampleConfig sample;
  DataConfig data;
  std::uint64_t seed = 0;

  void validate() const;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

const char* to_string(InitMode m);
const char* to_string(DdimFormula f);
const char* to_string(Marginals m);
InitMode parse_init_mode(const std::string& s);
DdimFormula parse_formula(const std::string& s);
Marginals parse_marginals(const std::string& s);

}  // namespace matchdiff
