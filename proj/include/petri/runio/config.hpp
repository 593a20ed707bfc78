#pragma once

#include <cstdint>
#include <string>

#include "petri/analysis/complexity.hpp"
#include "petri/substrate/world.hpp"

namespace petri {

enum class RunMode { kPbt, kRandomSearch, kFixed };

struct RunConfig {
  RunMode mode = RunMode::kPbt;
  SubstrateConfig substrate;

  std::size_t population = 30;              // P
  std::size_t meta_iterations = 500;        // T
  std::size_t segments_per_iteration = 12;  // T_world
  std::size_t exploit_interval = 5;         // K
  double replace_fraction = 0.25;           // rho
  std::size_t archive_increment = 2;        // m
  std::size_t knn = 8;
  std::size_t archive_capacity = 256;
  std::uint64_t archive_reset_period = 0;   // R, 0 = never
  bool archive_rank_by_novelty = false;
  double p_cross = 0.5;
  double p_pert = 0.1;
  double weight_noise = 0.01;               // sigma_w
  bool extended_space = false;
  bool sample_initial_hparams = true;

  std::size_t diversity_stride = 4;
  std::string embedder = "builtin";         // or host:port
  GridSymbols grid_symbols = GridSymbols::kWinnerPacked;

  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::string run_id = "run";
  std::size_t checkpoint_interval = 10;     // meta-iterations, 0 = final only
  std::size_t frame_export_stride = 0;      // inner steps, 0 = off
  std::size_t threads = 1;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

std::string to_string(RunMode mode);
RunMode parse_run_mode(const std::string& s);
std::string to_string(GridSymbols mode);
GridSymbols parse_grid_symbols(const std::string& s);

std::string config_to_json(const RunConfig& config, int indent = 2);
/// Missing keys keep their defaults; unknown keys are an error.
RunConfig config_from_json(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::string& path);

/// Applies one "dotted.key=value" override, e.g. "substrate.height=32".
void apply_override(RunConfig& config, const std::string& assignment);

}  // namespace petri
