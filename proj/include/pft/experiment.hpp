#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "pft/dataset.hpp"
#include "pft/encoder.hpp"
#include "pft/harness.hpp"
#include "pft/prompts.hpp"

namespace pft {

// One JSON experiment description shared by every subcommand. Each field has
// a usable default, so a config file only states what it changes; the fully
// resolved form (defaults, overrides, generated artifact paths) is echoed to
// <output_dir>/effective_config.json before the command does real work, and
// that echo is itself a valid config.
struct ExperimentConfig {
  int schema_version = 1;
  std::filesystem::path output_dir;
  std::string precision = "f32";  // f32 or f64
  int threads = 1;

  // Dataset: an existing manifest wins; otherwise `synthetic` is generated
  // under <output_dir>/data.
  std::filesystem::path dataset_manifest;
  SyntheticSpec synthetic;

  // Backbone: a checkpoint directory wins over a fresh initialization.
  std::filesystem::path backbone_checkpoint;
  VisionConfig vision;
  TextConfig text;
  double logit_scale = 100.0;
  std::uint64_t backbone_seed = 0;

  // Strategy: a checkpoint directory wins over a fresh initialization.
  std::filesystem::path strategy_checkpoint;
  StrategyConfig strategy;
  std::uint64_t strategy_seed = 0;

  TrainConfig train;
  EpisodeSpec episode;

  // matrix
  std::vector<StrategyKind> matrix_strategies = all_strategies();
  std::vector<std::int64_t> matrix_shots{1, 2, 4, 8, 16};
  std::vector<std::uint64_t> matrix_seeds{0, 1, 2};

  // variance
  std::string variance_split = "train";
  std::vector<std::filesystem::path> gain_runs;  // runs.jsonl inputs

  // attn-map
  std::int64_t map_layer = 1;
  std::int64_t map_image = 0;
  std::string map_split = "test";

  // shift-eval
  std::vector<double> shift_sigmas{0.5, 1.0};
  std::uint64_t shift_seed = 1;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& file);
nlohmann::json experiment_config_json(const ExperimentConfig& cfg);
void write_effective_config(const ExperimentConfig& cfg);

// Runs one subcommand; args excludes the program name. Success prints one
// JSON line on `out`; failures print one JSON line on `err`. Exit codes:
// 0 success, 2 bad command line, 3 invalid configuration or data,
// 1 runtime or I/O failure.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pft
