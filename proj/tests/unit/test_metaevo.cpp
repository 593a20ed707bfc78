#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <limits>
#include <map>

#include "petri/descriptor/descriptor.hpp"
#include "petri/metaevo/runner.hpp"

using namespace petri;

namespace {

SubstrateConfig tiny_substrate() {
  SubstrateConfig c;
  c.height = 8;
  c.width = 8;
  c.agents = 2;
  c.layout = ChannelLayout{2, 2, 2};
  c.hidden_width = 8;
  return c;
}

std::vector<WorldState> tiny_worlds(std::size_t count, std::uint64_t seed) {
  std::vector<WorldState> out;
  HyperParams hp;
  hp.batch_size = 2;
  for (std::size_t i = 0; i < count; ++i) out.push_back(init_world(tiny_substrate(), hp, seed + i));
  return out;
}

RunConfig tiny_run(RunMode mode) {
  RunConfig c;
  c.mode = mode;
  c.substrate = tiny_substrate();
  c.population = 4;
  c.meta_iterations = 3;
  c.segments_per_iteration = 2;
  c.sample_initial_hparams = false;
  c.seed = 5;
  return c;
}

bool same_world(const WorldState& a, const WorldState& b) {
  if (!(a.hparams == b.hparams) || a.steps != b.steps || a.segments != b.segments || a.rng != b.rng ||
      a.healthy != b.healthy || a.agents.size() != b.agents.size() || a.replicas.size() != b.replicas.size()) {
    return false;
  }
  for (std::size_t k = 0; k < a.agents.size(); ++k) {
    const auto& pa = a.agents[k];
    const auto& pb = b.agents[k];
    for (std::size_t p = 0; p < pa.params.size(); ++p) {
      if (!pa.params[p].bit_equal(pb.params[p])) return false;
      if (!pa.adam.m[p].bit_equal(pb.adam.m[p]) || !pa.adam.v[p].bit_equal(pb.adam.v[p])) return false;
    }
    if (pa.adam.step != pb.adam.step) return false;
  }
  for (std::size_t r = 0; r < a.replicas.size(); ++r) {
    if (!a.replicas[r].x.bit_equal(b.replicas[r].x) || !a.replicas[r].alive.bit_equal(b.replicas[r].alive) ||
        a.replicas[r].rng != b.replicas[r].rng) {
      return false;
    }
  }
  return true;
}

struct Tally : RunObserver {
  std::vector<IterationReport> reports;
  std::vector<std::string> warnings;
  void on_iteration(const Population&, const IterationReport& r) override { reports.push_back(r); }
  void on_warning(const std::string& m) override { warnings.push_back(m); }
};

}  // namespace

TEST(HyperSpace, MatchesSearchTable) {
  const auto base = HyperSpace::base();
  ASSERT_EQ(base.specs().size(), 3u);
  const auto& lr = base.spec("learning_rate");
  EXPECT_TRUE(lr.log_scale);
  EXPECT_FALSE(lr.integer);
  EXPECT_DOUBLE_EQ(lr.lo, 1e-6);
  EXPECT_DOUBLE_EQ(lr.hi, 1.0);
  EXPECT_DOUBLE_EQ(lr.default_value, 3e-4);
  const auto& bs = base.spec("batch_size");
  EXPECT_TRUE(bs.integer);
  EXPECT_EQ(bs.lo, 1);
  EXPECT_EQ(bs.hi, 8);
  EXPECT_EQ(bs.default_value, 8);
  const auto& st = base.spec("steps_per_update");
  EXPECT_EQ(st.lo, 1);
  EXPECT_EQ(st.hi, 64);
  EXPECT_EQ(st.default_value, 4);

  const auto ext = HyperSpace::extended();
  ASSERT_EQ(ext.specs().size(), 5u);
  EXPECT_TRUE(ext.spec("softmax_temp").log_scale);
  EXPECT_DOUBLE_EQ(ext.spec("softmax_temp").lo, 0.05);
  EXPECT_DOUBLE_EQ(ext.spec("softmax_temp").hi, 5.0);
  EXPECT_FALSE(ext.spec("per_hid_upd").log_scale);
  EXPECT_DOUBLE_EQ(ext.spec("per_hid_upd").lo, 0.05);
  EXPECT_DOUBLE_EQ(ext.spec("per_hid_upd").hi, 1.0);
  EXPECT_FALSE(base.contains("softmax_temp"));
  EXPECT_THROW(base.spec("momentum"), Error);

  for (const auto* space : {&base, &ext}) {
    for (const auto& s : space->specs()) {
      EXPECT_LT(s.lo, s.hi) << s.name;
      EXPECT_GE(s.default_value, s.lo) << s.name;
      EXPECT_LE(s.default_value, s.hi) << s.name;
    }
    EXPECT_TRUE(space->admits(space->defaults()));
  }
  EXPECT_EQ(base.defaults(), HyperParams{});
}

TEST(HyperSpace, SetAndReadByName) {
  HyperParams hp;
  set_hparam(hp, "batch_size", 4.6);
  EXPECT_EQ(hp.batch_size, 5);
  set_hparam(hp, "steps_per_update", 2.5);
  EXPECT_EQ(hp.steps_per_update, 3);
  set_hparam(hp, "softmax_temp", 0.25);
  EXPECT_DOUBLE_EQ(hparam_value(hp, "softmax_temp"), 0.25);
  EXPECT_THROW(set_hparam(hp, "nope", 1.0), Error);
  EXPECT_THROW(hparam_value(hp, "nope"), Error);
}

TEST(SampleHparams, LearningRateDecadesUniform) {
  // Six decades between 1e-6 and 1; each count is Binomial(10000, 1/6).
  const auto space = HyperSpace::base();
  Rng rng = make_stream(42, 0);
  std::array<int, 6> counts{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double lr = sample_hparams(space, rng).learning_rate;
    ASSERT_GE(lr, 1e-6);
    ASSERT_LE(lr, 1.0);
    const int decade = std::min(5, static_cast<int>(std::floor(std::log10(lr) + 6.0)));
    counts[static_cast<std::size_t>(decade)] += 1;
  }
  const double expect = n / 6.0;
  const double sigma = std::sqrt(n * (1.0 / 6.0) * (5.0 / 6.0));
  for (int c : counts) EXPECT_LE(std::abs(c - expect), 3.0 * sigma) << c;
}

TEST(SampleHparams, IntegersCoverRangeOnly) {
  const auto space = HyperSpace::extended();
  Rng rng = make_stream(3, 0);
  std::map<long, int> batch, steps;
  for (int i = 0; i < 5000; ++i) {
    const HyperParams hp = sample_hparams(space, rng);
    batch[hp.batch_size] += 1;
    steps[hp.steps_per_update] += 1;
    EXPECT_TRUE(space.admits(hp));
  }
  EXPECT_EQ(batch.size(), 8u);
  EXPECT_EQ(batch.begin()->first, 1);
  EXPECT_EQ(batch.rbegin()->first, 8);
  EXPECT_EQ(steps.size(), 64u);
}

TEST(SampleHparams, UnsearchedKeepDefaults) {
  Rng rng = make_stream(4, 0);
  for (int i = 0; i < 100; ++i) {
    const HyperParams hp = sample_hparams(HyperSpace::base(), rng);
    EXPECT_EQ(hp.softmax_temp, 1.0);
    EXPECT_EQ(hp.per_hid_upd, 1.0);
  }
}

TEST(SampleHparams, SeedDeterminesSequence) {
  Rng a = make_stream(9, 2), b = make_stream(9, 2), c = make_stream(10, 2);
  bool differs = false;
  for (int i = 0; i < 50; ++i) {
    const HyperParams x = sample_hparams(HyperSpace::extended(), a);
    EXPECT_EQ(x, sample_hparams(HyperSpace::extended(), b));
    differs |= !(x == sample_hparams(HyperSpace::extended(), c));
  }
  EXPECT_TRUE(differs);
}

TEST(MutateHparam, ScalesByTwentyPercent) {
  const HyperSpec lin{"x", false, 0.0, 1.0, false, 0.5};
  std::map<double, int> seen;
  Rng rng = make_stream(1, 0);
  for (int i = 0; i < 200; ++i) seen[mutate_hparam(0.5, lin, rng, 1.0)] += 1;
  ASSERT_EQ(seen.size(), 2u);
  EXPECT_DOUBLE_EQ(seen.begin()->first, 0.4);
  EXPECT_DOUBLE_EQ(seen.rbegin()->first, 0.6);
  EXPECT_GT(seen.begin()->second, 60);
  EXPECT_GT(seen.rbegin()->second, 60);
}

TEST(MutateHparam, ClipsAndRoundsIntegers) {
  const auto space = HyperSpace::base();
  Rng rng = make_stream(2, 0);
  std::map<double, int> batch8, steps4;
  for (int i = 0; i < 200; ++i) {
    batch8[mutate_hparam(8, space.spec("batch_size"), rng, 1.0)] += 1;
    steps4[mutate_hparam(4, space.spec("steps_per_update"), rng, 1.0)] += 1;
  }
  // 8 x 1.2 = 9.6 clips to 8; 8 x 0.8 = 6.4 rounds to 6.
  EXPECT_EQ(batch8.size(), 2u);
  EXPECT_TRUE(batch8.count(8.0) && batch8.count(6.0));
  // 4 x 0.8 = 3.2 rounds to 3; 4 x 1.2 = 4.8 rounds to 5.
  EXPECT_TRUE(steps4.count(3.0) && steps4.count(5.0));
  EXPECT_EQ(steps4.size(), 2u);
  const HyperSpec lr = space.spec("learning_rate");
  for (int i = 0; i < 50; ++i) EXPECT_LE(mutate_hparam(1.0, lr, rng, 1.0), 1.0);
}

TEST(MutateHparam, ZeroProbabilityLeavesValue) {
  const auto space = HyperSpace::base();
  Rng rng = make_stream(5, 0);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(mutate_hparam(3e-4, space.spec("learning_rate"), rng, 0.0), 3e-4);
}

TEST(MutateHparam, PerturbationRate) {
  const HyperSpec lin{"x", false, 0.0, 10.0, false, 1.0};
  Rng rng = make_stream(6, 0);
  int changed = 0;
  for (int i = 0; i < 10000; ++i) changed += mutate_hparam(1.0, lin, rng, 0.1) != 1.0;
  EXPECT_NEAR(changed, 1000, 3 * std::sqrt(10000 * 0.1 * 0.9));
}

TEST(MutateHparam, FuzzStaysInRange) {
  const auto space = HyperSpace::extended();
  Rng rng = make_stream(7, 0);
  HyperParams hp = sample_hparams(space, rng);
  for (int i = 0; i < 10000; ++i) {
    for (const auto& s : space.specs()) set_hparam(hp, s.name, mutate_hparam(hparam_value(hp, s.name), s, rng, 0.5));
    ASSERT_TRUE(space.admits(hp)) << "iteration " << i;
  }
}

TEST(CompositeScore, SumOrSentinel) {
  EXPECT_DOUBLE_EQ(composite_score(0.5, 0.3, true), 0.8);
  EXPECT_EQ(composite_score(0.0, 0.0, true), 0.0);
  EXPECT_EQ(composite_score(0.5, 0.3, false), -std::numeric_limits<double>::infinity());
  const auto order = rank_worlds({0.1, composite_score(9, 9, false), 0.3});
  EXPECT_EQ(order.back(), 1u);
}

TEST(ReplacementCount, RoundsHalfUp) {
  EXPECT_EQ(replacement_count(30, 0.25), 8u);
  EXPECT_EQ(replacement_count(4, 0.5), 2u);
  EXPECT_EQ(replacement_count(4, 0.25), 1u);
  EXPECT_EQ(replacement_count(3, 0.25), 1u);
  EXPECT_EQ(replacement_count(1, 0.25), 0u);
  EXPECT_EQ(replacement_count(10, 0.0), 0u);
}

TEST(RankWorlds, TiesKeepIndexOrder) {
  EXPECT_EQ(rank_worlds({1, 1, 1, 1}), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(rank_worlds({0.2, 0.5, 0.2, 0.9}), (std::vector<std::size_t>{3, 1, 0, 2}));
}

TEST(ExploitExplore, ReplacesLowestWithElites) {
  auto worlds = tiny_worlds(30, 100);
  std::vector<double> f(30);
  for (std::size_t i = 0; i < 30; ++i) f[i] = static_cast<double>((i * 7) % 30);
  const auto order = rank_worlds(f);
  const std::vector<std::size_t> top(order.begin(), order.begin() + 8);
  const std::vector<std::size_t> bottom(order.end() - 8, order.end());
  const auto before = worlds;
  Rng rng = make_stream(1, 1);
  const auto reps = exploit_explore(worlds, f, HyperSpace::base(), {}, rng);
  ASSERT_EQ(reps.size(), 8u);
  for (const auto& r : reps) {
    EXPECT_NE(std::find(bottom.begin(), bottom.end(), r.child), bottom.end());
    EXPECT_NE(std::find(top.begin(), top.end(), r.parent), top.end());
    EXPECT_EQ(r.before, before[r.child].hparams);
    EXPECT_EQ(worlds[r.child].hparams, r.after);
    EXPECT_EQ(worlds[r.child].steps, before[r.parent].steps);
  }
  for (std::size_t i = 0; i < 30; ++i) {
    const bool replaced = std::any_of(reps.begin(), reps.end(), [&](const Replacement& r) { return r.child == i; });
    if (!replaced) {
      EXPECT_TRUE(same_world(worlds[i], before[i])) << i;
    }
  }
}

TEST(ExploitExplore, DegenerateKnobsClone) {
  auto worlds = tiny_worlds(8, 200);
  for (std::size_t i = 0; i < 8; ++i) train_segment(worlds[i]);
  worlds[5].hparams.batch_size = 1;
  const std::vector<double> f{0.9, 0.8, 0.1, 0.7, 0.2, 0.6, 0.3, 0.5};
  const auto before = worlds;
  Rng rng = make_stream(2, 1);
  const ExploitSettings clone{0.25, 1.0, 0.0, 0.0};
  const auto reps = exploit_explore(worlds, f, HyperSpace::extended(), clone, rng);
  ASSERT_EQ(reps.size(), 2u);
  for (const auto& r : reps) {
    EXPECT_TRUE(r.child == 2 || r.child == 4);
    EXPECT_TRUE(r.parent == 0 || r.parent == 1);
    EXPECT_TRUE(same_world(worlds[r.child], before[r.parent]));
  }
}

TEST(ExploitExplore, CrossoverZeroRevertsHparams) {
  auto worlds = tiny_worlds(4, 300);
  worlds[3].hparams.learning_rate = 0.01;
  worlds[3].hparams.steps_per_update = 17;
  Rng rng = make_stream(3, 1);
  const auto reps = exploit_explore(worlds, {1, 0.5, 0.4, 0.1}, HyperSpace::base(), {0.25, 0.0, 0.0, 0.0}, rng);
  ASSERT_EQ(reps.size(), 1u);
  EXPECT_EQ(reps[0].child, 3u);
  EXPECT_EQ(worlds[3].hparams.learning_rate, 0.01);
  EXPECT_EQ(worlds[3].hparams.steps_per_update, 17);
  EXPECT_TRUE(worlds[3].agents[0].params[0].bit_equal(worlds[0].agents[0].params[0]));
}

TEST(ExploitExplore, WeightNoiseMagnitude) {
  auto worlds = tiny_worlds(4, 400);
  const auto before = worlds;
  Rng rng = make_stream(4, 1);
  const auto reps = exploit_explore(worlds, {1, 0.5, 0.4, 0.1}, HyperSpace::base(), {0.25, 1.0, 0.0, 0.01}, rng);
  ASSERT_EQ(reps.size(), 1u);
  double sq = 0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < worlds[3].agents.size(); ++k) {
    for (std::size_t p = 0; p < worlds[3].agents[k].params.size(); ++p) {
      const auto& a = worlds[3].agents[k].params[p];
      const auto& b = before[0].agents[k].params[p];
      for (std::size_t i = 0; i < a.numel(); ++i, ++n) sq += (a[i] - b[i]) * (a[i] - b[i]);
    }
  }
  EXPECT_NEAR(std::sqrt(sq / static_cast<double>(n)), 0.01, 0.001);
}

TEST(ExploitExplore, EqualScoresDeterministic) {
  auto a = tiny_worlds(8, 500), b = a;
  Rng ra = make_stream(8, 1), rb = make_stream(8, 1);
  const std::vector<double> f(8, 0.5);
  const auto x = exploit_explore(a, f, HyperSpace::base(), {}, ra);
  const auto y = exploit_explore(b, f, HyperSpace::base(), {}, rb);
  ASSERT_EQ(x.size(), 2u);
  // Top two by index are the elites, the last two the children.
  EXPECT_EQ(x[0].child, 6u);
  EXPECT_EQ(x[1].child, 7u);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].child, y[i].child);
    EXPECT_EQ(x[i].parent, y[i].parent);
    EXPECT_LT(x[i].parent, 2u);
  }
  for (std::size_t i = 0; i < 8; ++i) EXPECT_TRUE(same_world(a[i], b[i]));
}

TEST(ExploitExplore, UnhealthyAlwaysReplaced) {
  auto worlds = tiny_worlds(8, 600);
  worlds[0].healthy = false;
  worlds[1].healthy = false;
  worlds[2].healthy = false;
  std::vector<double> f{composite_score(0, 0, false), composite_score(0, 0, false), composite_score(0, 0, false),
                        0.1, 0.2, 0.3, 0.4, 0.5};
  Rng rng = make_stream(9, 1);
  const auto reps = exploit_explore(worlds, f, HyperSpace::base(), {}, rng);
  ASSERT_EQ(reps.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(reps[i].child, i);
    EXPECT_TRUE(reps[i].parent == 7 || reps[i].parent == 6);
    EXPECT_TRUE(worlds[i].healthy);
  }
}

TEST(ExploitExplore, NothingToReplace) {
  auto worlds = tiny_worlds(1, 700);
  Rng rng = make_stream(1, 1);
  EXPECT_TRUE(exploit_explore(worlds, {0.3}, HyperSpace::base(), {}, rng).empty());
  auto three = tiny_worlds(3, 700);
  EXPECT_THROW(exploit_explore(three, {1, 2}, HyperSpace::base(), {}, rng), ShapeError);
  EXPECT_THROW(exploit_explore(three, {1, 2, 3}, HyperSpace::base(), {0.75, 0.5, 0.1, 0.0}, rng), ConfigError);
}

TEST(Runner, InitialHparamsByMode) {
  RunConfig c = tiny_run(RunMode::kPbt);
  c.sample_initial_hparams = true;
  const Population sampled = init_population(c);
  ASSERT_EQ(sampled.worlds.size(), 4u);
  bool any_non_default = false;
  for (const auto& w : sampled.worlds) any_non_default |= !(w.hparams == HyperParams{});
  EXPECT_TRUE(any_non_default);
  c.mode = RunMode::kFixed;
  for (const auto& w : init_population(c).worlds) EXPECT_EQ(w.hparams, HyperParams{});
  EXPECT_NE(world_seed(1, 0), world_seed(1, 1));
  EXPECT_NE(world_seed(1, 0), world_seed(2, 0));
}

TEST(Runner, ExploitEveryIterationSchedule) {
  RunConfig c = tiny_run(RunMode::kPbt);
  c.exploit_interval = 1;
  c.replace_fraction = 0.5;
  Tally tally;
  const Population pop = run_pbt(c, &tally);
  ASSERT_EQ(tally.reports.size(), 3u);
  for (const auto& r : tally.reports) {
    EXPECT_TRUE(r.exploited);
    EXPECT_EQ(r.replacements.size(), 2u);
  }
  EXPECT_EQ(pop.t, 3u);
  EXPECT_EQ(pop.archive.size(), 6u);
}

TEST(Runner, ExploitOnlyOnMultiplesOfInterval) {
  RunConfig c = tiny_run(RunMode::kPbt);
  c.population = 8;
  c.meta_iterations = 6;
  c.segments_per_iteration = 1;
  c.exploit_interval = 3;
  Tally tally;
  run_pbt(c, &tally);
  ASSERT_EQ(tally.reports.size(), 6u);
  for (const auto& r : tally.reports) {
    EXPECT_EQ(r.exploited, r.t % 3 == 0) << r.t;
    EXPECT_EQ(r.replacements.size(), r.t % 3 == 0 ? 2u : 0u) << r.t;
  }
}

TEST(Runner, RandomSearchKeepsHparamsAndArchive) {
  RunConfig c = tiny_run(RunMode::kRandomSearch);
  c.sample_initial_hparams = true;
  c.exploit_interval = 1;
  Tally tally;
  const Population pop = run_random_search(c, &tally);
  EXPECT_EQ(pop.archive.size(), 0u);
  const auto initial = init_population(c);
  for (std::size_t i = 0; i < pop.worlds.size(); ++i) EXPECT_EQ(pop.worlds[i].hparams, initial.worlds[i].hparams);
  for (const auto& r : tally.reports) {
    EXPECT_FALSE(r.exploited);
    EXPECT_TRUE(r.replacements.empty());
    EXPECT_EQ(r.rollout_hparams, r.hparams);
  }
}

TEST(Runner, FixedModeUsesDefaults) {
  Tally tally;
  const Population pop = run_fixed(tiny_run(RunMode::kFixed), &tally);
  for (const auto& w : pop.worlds) {
    EXPECT_EQ(w.hparams, HyperParams{});
    EXPECT_EQ(w.segments, 6u);
  }
  EXPECT_EQ(pop.archive.size(), 0u);
}

TEST(Runner, ScoresAreFiniteAndComposite) {
  Tally tally;
  run_pbt(tiny_run(RunMode::kPbt), &tally);
  for (const auto& r : tally.reports) {
    for (const auto& s : r.scores) {
      ASSERT_TRUE(s.healthy);
      EXPECT_TRUE(std::isfinite(s.fitness));
      EXPECT_DOUBLE_EQ(s.fitness, s.novelty + s.diversity);
      EXPECT_GE(s.diversity, 0.0);
      EXPECT_EQ(s.descriptor.size(), descriptor_length(2));
    }
  }
  // The archive is empty at t = 1, so novelty is zero there.
  for (const auto& s : tally.reports[0].scores) EXPECT_EQ(s.novelty, 0.0);
  for (const auto& s : tally.reports[1].scores) EXPECT_GT(s.novelty, 0.0);
}

TEST(Runner, SameSeedSameSeries) {
  RunConfig c = tiny_run(RunMode::kPbt);
  c.exploit_interval = 2;
  c.meta_iterations = 4;
  c.sample_initial_hparams = true;
  Tally a, b;
  const Population pa = run_pbt(c, &a);
  const Population pb = run_pbt(c, &b);
  ASSERT_EQ(a.reports.size(), b.reports.size());
  for (std::size_t t = 0; t < a.reports.size(); ++t) {
    for (std::size_t i = 0; i < c.population; ++i) {
      EXPECT_EQ(a.reports[t].scores[i].fitness, b.reports[t].scores[i].fitness);
    }
  }
  for (std::size_t i = 0; i < c.population; ++i) EXPECT_TRUE(same_world(pa.worlds[i], pb.worlds[i]));

  c.seed += 1;
  Tally other;
  run_pbt(c, &other);
  EXPECT_NE(other.reports[0].scores[0].fitness, a.reports[0].scores[0].fitness);
}

TEST(Runner, ThreadCountDoesNotChangeResults) {
  RunConfig c = tiny_run(RunMode::kPbt);
  c.exploit_interval = 2;
  Tally one, many;
  run_pbt(c, &one);
  c.threads = 3;
  run_pbt(c, &many);
  for (std::size_t t = 0; t < one.reports.size(); ++t) {
    for (std::size_t i = 0; i < c.population; ++i) {
      EXPECT_EQ(one.reports[t].scores[i].fitness, many.reports[t].scores[i].fitness);
    }
  }
}

TEST(Runner, SingleWorldWarnsAboutDiversity) {
  RunConfig c = tiny_run(RunMode::kPbt);
  c.population = 1;
  c.meta_iterations = 1;
  Tally tally;
  run_pbt(c, &tally);
  ASSERT_EQ(tally.reports.size(), 1u);
  EXPECT_EQ(tally.reports[0].scores[0].diversity, 0.0);
  EXPECT_FALSE(tally.warnings.empty());
}
