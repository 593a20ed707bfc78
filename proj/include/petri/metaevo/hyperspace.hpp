#pragma once

#include <string>
#include <vector>

#include "petri/substrate/world.hpp"

namespace petri {

struct HyperSpec {
  std::string name;
  bool integer = false;
  double lo = 0.0;
  double hi = 1.0;
  bool log_scale = false;
  double default_value = 0.0;
};

class HyperSpace {
 public:
  /// learning_rate, batch_size, steps_per_update.
  static HyperSpace base();
  /// base plus softmax_temp and per_hid_upd.
  static HyperSpace extended();

  explicit HyperSpace(std::vector<HyperSpec> specs);

  const std::vector<HyperSpec>& specs() const { return specs_; }
  const HyperSpec& spec(const std::string& name) const;
  bool contains(const std::string& name) const;
  HyperParams defaults() const;
  /// Every searched value lies in [lo, hi] and integers are whole.
  bool admits(const HyperParams& hp) const;

 private:
  std::vector<HyperSpec> specs_;
};

double hparam_value(const HyperParams& hp, const std::string& name);
void set_hparam(HyperParams& hp, const std::string& name, double value);

/// Log-uniform for log-scale floats, uniform for linear floats, uniform
/// inclusive for integers. Parameters outside the space keep their defaults.
HyperParams sample_hparams(const HyperSpace& space, Rng& rng);

/// With probability p_pert scale by 1.2 or 0.8, clip to range, round integers.
double mutate_hparam(double value, const HyperSpec& spec, Rng& rng, double p_pert);

}  // namespace petri
