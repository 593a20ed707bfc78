#include "petri/metaevo/population.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace petri {

double composite_score(double novelty, double diversity, bool healthy) {
  if (!healthy) return -std::numeric_limits<double>::infinity();
  return novelty + diversity;
}

std::size_t replacement_count(std::size_t population, double replace_fraction) {
  return static_cast<std::size_t>(std::max(0L, round_half_up(replace_fraction * static_cast<double>(population))));
}

std::vector<std::size_t> rank_worlds(const std::vector<double>& fitness) {
  std::vector<std::size_t> order(fitness.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fitness[a] > fitness[b]; });
  return order;
}

std::vector<Replacement> exploit_explore(std::vector<WorldState>& worlds, const std::vector<double>& fitness,
                                         const HyperSpace& space, const ExploitSettings& s, Rng& rng) {
  if (fitness.size() != worlds.size()) throw ShapeError("exploit_explore: one score per world required");
  const std::size_t p = worlds.size();
  const std::size_t n = replacement_count(p, s.replace_fraction);
  if (n == 0) return {};
  if (2 * n > p) throw ConfigError("exploit_explore: replace fraction leaves elites and replacements overlapping");

  const auto order = rank_worlds(fitness);
  std::vector<std::size_t> elites;
  for (std::size_t i : order) {
    if (elites.size() == n) break;
    if (worlds[i].healthy) elites.push_back(i);
  }
  if (elites.empty()) return {};

  std::vector<bool> replace(p, false);
  std::size_t count = 0;
  for (std::size_t i = 0; i < p; ++i) {
    if (!worlds[i].healthy) {
      replace[i] = true;
      ++count;
    }
  }
  for (auto it = order.rbegin(); it != order.rend() && count < n; ++it) {
    if (!replace[*it] && std::find(elites.begin(), elites.end(), *it) == elites.end()) {
      replace[*it] = true;
      ++count;
    }
  }

  std::vector<Replacement> out;
  for (std::size_t c = 0; c < p; ++c) {
    if (!replace[c]) continue;
    Replacement r;
    r.child = c;
    r.parent = elites[uniform_index(rng, elites.size())];
    r.before = worlds[c].hparams;
    worlds[c] = worlds[r.parent];
    WorldState& child = worlds[c];

    HyperParams hp = child.hparams;
    for (const HyperSpec& spec : space.specs()) {
      if (!bernoulli(rng, s.p_cross)) set_hparam(hp, spec.name, hparam_value(r.before, spec.name));
    }
    for (const HyperSpec& spec : space.specs()) {
      set_hparam(hp, spec.name, mutate_hparam(hparam_value(hp, spec.name), spec, rng, s.p_pert));
    }
    child.hparams = hp;

    if (s.weight_noise > 0.0) {
      for (AgentNet& net : child.agents) {
        for (Tensor& t : net.params) {
          for (float& v : t.data()) v += static_cast<float>(s.weight_noise * normal(rng));
        }
      }
    }
    r.after = hp;
    out.push_back(r);
  }
  return out;
}

}  // namespace petri
