#pragma once

#include <memory>
#include <string>
#include <vector>

#include "petri/diversity/embedder.hpp"
#include "petri/metaevo/population.hpp"
#include "petri/novelty/archive.hpp"
#include "petri/runio/config.hpp"

namespace petri {

struct Population {
  std::vector<WorldState> worlds;
  Archive archive;
  Rng rng;                 // meta stream: exploit-explore only
  std::uint64_t t = 0;     // completed meta-iterations
};

struct WorldScore {
  double novelty = 0.0;
  double diversity = 0.0;
  double fitness = 0.0;
  bool healthy = true;
  std::vector<double> descriptor;  // empty for unhealthy worlds
};

struct IterationReport {
  std::uint64_t t = 0;
  std::vector<WorldScore> scores;
  std::vector<HyperParams> rollout_hparams;  // used for this iteration's rollouts
  std::vector<HyperParams> hparams;          // after exploit-explore
  std::vector<Replacement> replacements;
  bool exploited = false;
  std::size_t archive_size = 0;
};

class RunObserver {
 public:
  virtual ~RunObserver() = default;
  /// Called once per world after its rollout, in world order.
  virtual void on_rollout(std::uint64_t /*t*/, std::size_t /*world*/, const WorldState&, const Trajectory&) {}
  /// Called after scoring, archive update and exploit-explore.
  virtual void on_iteration(const Population&, const IterationReport&) {}
  virtual void on_warning(const std::string&) {}
};

HyperSpace search_space(const RunConfig& config);
std::uint64_t world_seed(std::uint64_t run_seed, std::size_t world);

/// P fresh worlds. Initial hparams are sampled from the space in pbt and
/// random-search modes (unless disabled) and are the defaults in fixed mode.
Population init_population(const RunConfig& config);

/// One meta-iteration: rollouts, descriptors, novelty, diversity, composite
/// scores, archive update and (pbt, t mod K = 0) exploit-explore. A failing
/// embedder is replaced by the builtin one and the step is retried.
IterationReport meta_iteration(Population& population, const RunConfig& config, std::unique_ptr<Embedder>& embedder,
                               RunObserver* observer = nullptr);

/// Runs meta-iterations until population.t == config.meta_iterations.
void run_population(Population& population, const RunConfig& config, std::unique_ptr<Embedder>& embedder,
                    RunObserver* observer = nullptr);

Population run_pbt(RunConfig config, RunObserver* observer = nullptr);
Population run_random_search(RunConfig config, RunObserver* observer = nullptr);
Population run_fixed(RunConfig config, RunObserver* observer = nullptr);

}  // namespace petri
