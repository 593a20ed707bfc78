#pragma once

#include <vector>

#include "petri/metaevo/hyperspace.hpp"

namespace petri {

/// N + D, or -inf for an unhealthy world.
double composite_score(double novelty, double diversity, bool healthy);

/// round_half_up(rho * P).
std::size_t replacement_count(std::size_t population, double replace_fraction);

/// World indices best-first; equal scores keep index order.
std::vector<std::size_t> rank_worlds(const std::vector<double>& fitness);

struct ExploitSettings {
  double replace_fraction = 0.25;
  double p_cross = 0.5;
  double p_pert = 0.1;
  double weight_noise = 0.01;
};

struct Replacement {
  std::size_t child = 0;
  std::size_t parent = 0;
  HyperParams before;  // child's hparams before the copy
  HyperParams after;
};

/// Replaces the round(rho P) lowest-ranked worlds (every unhealthy world is
/// included) by deep copies of parents drawn uniformly from the top
/// round(rho P) healthy worlds, then applies crossover, mutation and weight
/// noise. All randomness comes from `rng`, consumed in child-index order.
std::vector<Replacement> exploit_explore(std::vector<WorldState>& worlds, const std::vector<double>& fitness,
                                         const HyperSpace& space, const ExploitSettings& settings, Rng& rng);

}  // namespace petri
