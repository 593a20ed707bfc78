#include "petri/metaevo/hyperspace.hpp"

#include <algorithm>
#include <cmath>

namespace petri {

HyperSpace::HyperSpace(std::vector<HyperSpec> specs) : specs_(std::move(specs)) {
  for (const HyperSpec& s : specs_) {
    if (!(s.lo < s.hi)) throw ConfigError("hyperparameter " + s.name + ": lo must be < hi");
    if (s.default_value < s.lo || s.default_value > s.hi) throw ConfigError("hyperparameter " + s.name + ": default out of range");
    if (s.log_scale && s.lo <= 0.0) throw ConfigError("hyperparameter " + s.name + ": log scale needs lo > 0");
    HyperParams probe;
    set_hparam(probe, s.name, s.default_value);  // rejects unknown names
  }
}

HyperSpace HyperSpace::base() {
  return HyperSpace({
      {"learning_rate", false, 1e-6, 1.0, true, 3e-4},
      {"batch_size", true, 1, 8, false, 8},
      {"steps_per_update", true, 1, 64, false, 4},
  });
}

HyperSpace HyperSpace::extended() {
  auto specs = base().specs();
  specs.push_back({"softmax_temp", false, 0.05, 5.0, true, 1.0});
  specs.push_back({"per_hid_upd", false, 0.05, 1.0, false, 1.0});
  return HyperSpace(std::move(specs));
}

const HyperSpec& HyperSpace::spec(const std::string& name) const {
  for (const HyperSpec& s : specs_)
    if (s.name == name) return s;
  throw ConfigError("no hyperparameter named " + name);
}

bool HyperSpace::contains(const std::string& name) const {
  return std::any_of(specs_.begin(), specs_.end(), [&](const HyperSpec& s) { return s.name == name; });
}

HyperParams HyperSpace::defaults() const {
  HyperParams hp;
  for (const HyperSpec& s : specs_) set_hparam(hp, s.name, s.default_value);
  return hp;
}

bool HyperSpace::admits(const HyperParams& hp) const {
  for (const HyperSpec& s : specs_) {
    const double v = hparam_value(hp, s.name);
    if (!(v >= s.lo && v <= s.hi)) return false;
    if (s.integer && v != std::floor(v)) return false;
  }
  return true;
}

double hparam_value(const HyperParams& hp, const std::string& name) {
  if (name == "learning_rate") return hp.learning_rate;
  if (name == "batch_size") return static_cast<double>(hp.batch_size);
  if (name == "steps_per_update") return static_cast<double>(hp.steps_per_update);
  if (name == "softmax_temp") return hp.softmax_temp;
  if (name == "per_hid_upd") return hp.per_hid_upd;
  throw ConfigError("no hyperparameter named " + name);
}

void set_hparam(HyperParams& hp, const std::string& name, double value) {
  if (name == "learning_rate") hp.learning_rate = value;
  else if (name == "batch_size") hp.batch_size = round_half_up(value);
  else if (name == "steps_per_update") hp.steps_per_update = round_half_up(value);
  else if (name == "softmax_temp") hp.softmax_temp = value;
  else if (name == "per_hid_upd") hp.per_hid_upd = value;
  else throw ConfigError("no hyperparameter named " + name);
}

HyperParams sample_hparams(const HyperSpace& space, Rng& rng) {
  HyperParams hp;
  for (const HyperSpec& s : space.specs()) {
    double v;
    if (s.integer) {
      const auto lo = static_cast<std::uint64_t>(s.lo), hi = static_cast<std::uint64_t>(s.hi);
      v = static_cast<double>(lo + uniform_index(rng, hi - lo + 1));
    } else if (s.log_scale) {
      v = std::exp(uniform(rng, std::log(s.lo), std::log(s.hi)));
    } else {
      v = uniform(rng, s.lo, s.hi);
    }
    set_hparam(hp, s.name, std::clamp(v, s.lo, s.hi));
  }
  return hp;
}

double mutate_hparam(double value, const HyperSpec& spec, Rng& rng, double p_pert) {
  if (!bernoulli(rng, p_pert)) return value;
  double v = value * (bernoulli(rng, 0.5) ? 1.2 : 0.8);
  v = std::clamp(v, spec.lo, spec.hi);
  if (spec.integer) v = static_cast<double>(round_half_up(v));
  return v;
}

}  // namespace petri
