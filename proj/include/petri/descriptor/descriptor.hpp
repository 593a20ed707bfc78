#pragma once

#include <vector>

#include "petri/substrate/world.hpp"

namespace petri {

/// Per-frame share of total contribution weight held by each entity.
/// Column 0 is the environment.
struct SpeciesFractions {
  std::size_t frames = 0;
  std::size_t entities = 0;
  std::vector<double> values;  // row-major [frames, entities]

  double at(std::size_t t, std::size_t e) const { return values[t * entities + e]; }
};

SpeciesFractions species_fractions(const Trajectory& trajectory);

struct DescriptorFeatures {
  std::vector<double> mean;      // mu
  std::vector<double> stddev;    // sigma, population
  std::vector<double> turnover;  // delta
  double winner_entropy = 0.0;   // H_win, bits
  double mask_change = 0.0;      // nu
};

/// mu, sigma and delta from a fraction matrix; the two scalars are left 0.
DescriptorFeatures fraction_features(const SpeciesFractions& fractions);

/// Unit-norm [mu; sigma; delta; H_win; nu], or all zeros if every feature is 0.
struct BehaviorDescriptor {
  std::vector<double> values;
};

BehaviorDescriptor normalize_features(const DescriptorFeatures& features);

DescriptorFeatures trajectory_features(const Trajectory& trajectory, std::size_t agents);

BehaviorDescriptor behavior_descriptor(const Trajectory& trajectory, std::size_t agents);

inline std::size_t descriptor_length(std::size_t agents) { return 3 * (agents + 1) + 2; }

/// Argmax over entities of each cell's weight; ties go to the lower index.
std::vector<std::uint8_t> winner_map(const Frame& frame);

}  // namespace petri
