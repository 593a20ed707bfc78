#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include "petri/runio/checkpoint.hpp"

namespace petri {

/// Writes one run directory:
///   config.json      effective configuration
///   metrics.jsonl    one record per world per meta-iteration
///   summary.jsonl    one record per meta-iteration
///   checkpoint.bin   latest checkpoint
///   frames/wNNN/     {run_id}_t{t:06}_s{step:06}.png when frame export is on
class RunRecorder final : public RunObserver {
 public:
  using Logger = std::function<void(const std::string&)>;

  /// Fresh run: truncates the logs. Resume: truncates them to the cursors
  /// saved in `resume_from`.
  RunRecorder(const RunConfig& config, Logger log, const Checkpoint* resume_from = nullptr);

  void on_rollout(std::uint64_t t, std::size_t world, const WorldState& state, const Trajectory& trajectory) override;
  void on_iteration(const Population& population, const IterationReport& report) override;
  void on_warning(const std::string& message) override;

  void save(const Population& population);

  std::filesystem::path metrics_path() const { return dir_ / "metrics.jsonl"; }
  std::filesystem::path summary_path() const { return dir_ / "summary.jsonl"; }
  std::filesystem::path checkpoint_path() const { return dir_ / "checkpoint.bin"; }

 private:
  struct Complexity {
    double persistence = 0.0;
    double entropy_mean = 0.0;
    double complexity_mean = 0.0;
  };

  RunConfig config_;
  Logger log_;
  std::filesystem::path dir_;
  std::ofstream metrics_;
  std::ofstream summary_;
  std::vector<Complexity> complexity_;
  std::uint64_t last_saved_ = 0;
};

/// Frame file name for world step `step` exported at meta-iteration `t`.
std::string frame_filename(const std::string& run_id, std::uint64_t t, std::uint64_t step);

/// Runs `config` (or resumes `checkpoint_path` when non-empty) to
/// config.meta_iterations and writes the run directory.
Population run_experiment(const RunConfig& config, const std::string& checkpoint_path, RunRecorder::Logger log);

}  // namespace petri
