#include "petri/metaevo/runner.hpp"

#include <atomic>
#include <exception>
#include <limits>
#include <thread>

#include "petri/descriptor/descriptor.hpp"
#include "petri/diversity/diversity.hpp"

namespace petri {

namespace {

template <typename F>
void parallel_for(std::size_t count, std::size_t threads, F&& body) {
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < count;) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void warn(RunObserver* obs, const std::string& msg) {
  if (obs) obs->on_warning(msg);
}

std::vector<double> compute_diversity(const Population& pop, const std::vector<Trajectory>& trajs,
                                      const std::vector<std::size_t>& healthy, const RunConfig& config,
                                      Embedder& embedder) {
  std::size_t shortest = std::numeric_limits<std::size_t>::max();
  for (std::size_t i : healthy) shortest = std::min(shortest, trajs[i].size());
  std::vector<Image> frames;
  std::vector<std::size_t> counts;
  for (std::size_t i : healthy) {
    const auto idx = sample_frame_indices(trajs[i].size(), shortest, config.diversity_stride);
    const auto& cfg = pop.worlds[i].config;
    for (std::size_t j : idx) frames.push_back(render_frame(trajs[i][j], cfg.height, cfg.width));
    counts.push_back(idx.size());
  }
  const auto z = embedder.embed(frames);
  if (z.size() != frames.size()) throw Error("embedder returned the wrong number of embeddings");
  std::vector<std::vector<Embedding>> per_world;
  std::size_t pos = 0;
  for (std::size_t c : counts) {
    per_world.emplace_back(z.begin() + static_cast<std::ptrdiff_t>(pos), z.begin() + static_cast<std::ptrdiff_t>(pos + c));
    pos += c;
  }
  return diversity_scores(per_world);
}

}  // namespace

HyperSpace search_space(const RunConfig& config) {
  return config.extended_space ? HyperSpace::extended() : HyperSpace::base();
}

std::uint64_t world_seed(std::uint64_t run_seed, std::size_t world) {
  Rng r = make_stream(run_seed, 0x1000 + world);
  return r();
}

Population init_population(const RunConfig& config) {
  config.validate();
  const HyperSpace space = search_space(config);
  Population pop;
  pop.archive = Archive(config.archive_capacity, config.archive_reset_period);
  pop.rng = make_stream(config.seed, 1);
  for (std::size_t i = 0; i < config.population; ++i) {
    HyperParams hp = space.defaults();
    if (config.mode != RunMode::kFixed && config.sample_initial_hparams) {
      Rng hr = make_stream(config.seed, 0x2000 + i);
      hp = sample_hparams(space, hr);
    }
    pop.worlds.push_back(init_world(config.substrate, hp, world_seed(config.seed, i)));
  }
  return pop;
}

IterationReport meta_iteration(Population& pop, const RunConfig& config, std::unique_ptr<Embedder>& embedder,
                               RunObserver* observer) {
  const std::size_t p = pop.worlds.size();
  const std::uint64_t t = pop.t + 1;

  std::vector<Trajectory> trajs(p);
  parallel_for(p, config.threads, [&](std::size_t i) {
    trajs[i] = rollout_meta_iteration(pop.worlds[i], config.segments_per_iteration);
  });
  if (observer) {
    for (std::size_t i = 0; i < p; ++i) observer->on_rollout(t, i, pop.worlds[i], trajs[i]);
  }

  IterationReport rep;
  rep.t = t;
  for (const WorldState& w : pop.worlds) rep.rollout_hparams.push_back(w.hparams);
  rep.scores.resize(p);
  std::vector<std::size_t> healthy;
  for (std::size_t i = 0; i < p; ++i) {
    WorldScore& s = rep.scores[i];
    s.healthy = pop.worlds[i].healthy && !trajs[i].empty();
    if (!s.healthy) continue;
    healthy.push_back(i);
    const Trajectory& tr = trajs[i];
    const std::size_t n = pop.worlds[i].config.agents;
    s.descriptor = tr.size() >= 2 ? behavior_descriptor(tr, n).values : behavior_descriptor({tr[0], tr[0]}, n).values;
    s.novelty = novelty_score(s.descriptor, pop.archive, config.knn);
  }

  if (healthy.size() >= 2) {
    std::vector<double> d;
    try {
      d = compute_diversity(pop, trajs, healthy, config, *embedder);
    } catch (const Error& e) {
      if (embedder->name() == "builtin") throw;
      warn(observer, std::string("embedder failed (") + e.what() + "); switching to the builtin embedder");
      embedder = std::make_unique<BuiltinEmbedder>();
      d = compute_diversity(pop, trajs, healthy, config, *embedder);
    }
    for (std::size_t j = 0; j < healthy.size(); ++j) rep.scores[healthy[j]].diversity = d[j];
  } else if (p >= 2 || config.mode != RunMode::kFixed) {
    warn(observer, "t=" + std::to_string(t) + ": fewer than two healthy worlds, diversity set to 0");
  }

  std::vector<double> fitness(p), rank_key(p);
  for (std::size_t i = 0; i < p; ++i) {
    WorldScore& s = rep.scores[i];
    s.fitness = composite_score(s.novelty, s.diversity, s.healthy);
    fitness[i] = s.fitness;
    rank_key[i] = config.archive_rank_by_novelty && s.healthy ? s.novelty : s.fitness;
  }

  if (config.mode == RunMode::kPbt) {
    std::vector<std::vector<double>> ranked;
    for (std::size_t i : rank_worlds(rank_key)) {
      if (rep.scores[i].healthy) ranked.push_back(rep.scores[i].descriptor);
    }
    if (!ranked.empty()) pop.archive.update(ranked, config.archive_increment, t);

    if (t % config.exploit_interval == 0) {
      rep.exploited = true;
      const ExploitSettings settings{config.replace_fraction, config.p_cross, config.p_pert, config.weight_noise};
      rep.replacements = exploit_explore(pop.worlds, fitness, search_space(config), settings, pop.rng);
      if (rep.replacements.empty()) warn(observer, "t=" + std::to_string(t) + ": exploit-explore replaced no worlds");
    }
  }

  pop.t = t;
  rep.archive_size = pop.archive.size();
  for (const WorldState& w : pop.worlds) rep.hparams.push_back(w.hparams);
  if (observer) observer->on_iteration(pop, rep);
  return rep;
}

void run_population(Population& pop, const RunConfig& config, std::unique_ptr<Embedder>& embedder, RunObserver* observer) {
  while (pop.t < config.meta_iterations) meta_iteration(pop, config, embedder, observer);
}

namespace {

Population run_mode(RunConfig config, RunMode mode, RunObserver* observer) {
  config.mode = mode;
  Population pop = init_population(config);
  const std::string endpoint = config.embedder == "builtin" ? std::string() : config.embedder;
  auto embedder = make_embedder(endpoint, [&](const std::string& m) { warn(observer, m); });
  run_population(pop, config, embedder, observer);
  return pop;
}

}  // namespace

Population run_pbt(RunConfig config, RunObserver* observer) { return run_mode(std::move(config), RunMode::kPbt, observer); }

Population run_random_search(RunConfig config, RunObserver* observer) {
  return run_mode(std::move(config), RunMode::kRandomSearch, observer);
}

Population run_fixed(RunConfig config, RunObserver* observer) {
  return run_mode(std::move(config), RunMode::kFixed, observer);
}

}  // namespace petri
