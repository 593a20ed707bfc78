#include "petri/runio/recorder.hpp"

#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "petri/analysis/complexity.hpp"

namespace petri {

using nlohmann::json;

namespace {

json hparams_json(const HyperParams& hp) {
  return json{{"learning_rate", hp.learning_rate},
              {"batch_size", hp.batch_size},
              {"steps_per_update", hp.steps_per_update},
              {"softmax_temp", hp.softmax_temp},
              {"per_hid_upd", hp.per_hid_upd}};
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void truncate_to(const std::filesystem::path& p, std::uint64_t size) {
  if (!std::filesystem::exists(p)) {
    if (size != 0) throw Error("cannot resume: " + p.string() + " is missing");
    return;
  }
  if (std::filesystem::file_size(p) < size) throw Error("cannot resume: " + p.string() + " is shorter than the checkpoint cursor");
  std::filesystem::resize_file(p, size);
}

}  // namespace

std::string frame_filename(const std::string& run_id, std::uint64_t t, std::uint64_t step) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "_t%06llu_s%06llu.png", static_cast<unsigned long long>(t),
                static_cast<unsigned long long>(step));
  return run_id + buf;
}

RunRecorder::RunRecorder(const RunConfig& config, Logger log, const Checkpoint* resume_from)
    : config_(config), log_(std::move(log)), dir_(config.output_dir) {
  std::filesystem::create_directories(dir_);
  if (resume_from) {
    truncate_to(metrics_path(), resume_from->metrics_cursor);
    truncate_to(summary_path(), resume_from->summary_cursor);
    last_saved_ = resume_from->population.t;
    metrics_.open(metrics_path(), std::ios::app);
    summary_.open(summary_path(), std::ios::app);
  } else {
    metrics_.open(metrics_path(), std::ios::trunc);
    summary_.open(summary_path(), std::ios::trunc);
  }
  if (!metrics_ || !summary_) throw Error("cannot open logs in " + dir_.string());
  std::ofstream(dir_ / "config.json") << config_to_json(config_) << "\n";
}

void RunRecorder::on_rollout(std::uint64_t t, std::size_t world, const WorldState& state, const Trajectory& traj) {
  if (complexity_.size() <= world) complexity_.resize(world + 1);
  Complexity c;
  if (!traj.empty()) {
    const auto r = analyze_trajectory(traj, state.config.height, state.config.width, config_.grid_symbols);
    c = {r.persistence, r.entropy_mean, r.complexity_mean};
  }
  complexity_[world] = c;

  if (config_.frame_export_stride == 0) return;
  char sub[32];
  std::snprintf(sub, sizeof sub, "w%03zu", world);
  const auto dir = dir_ / "frames" / sub;
  std::filesystem::create_directories(dir);
  for (const Frame& f : traj) {
    if (f.step % config_.frame_export_stride != 0) continue;
    write_png(render_frame(f, state.config.height, state.config.width), (dir / frame_filename(config_.run_id, t, f.step)).string());
  }
}

void RunRecorder::on_iteration(const Population& pop, const IterationReport& rep) {
  double sum_f = 0, sum_n = 0, sum_d = 0, sum_fh = 0;
  std::size_t healthy = 0;
  for (std::size_t i = 0; i < rep.scores.size(); ++i) {
    const WorldScore& s = rep.scores[i];
    const Complexity c = i < complexity_.size() ? complexity_[i] : Complexity{};
    json rec{{"t", rep.t},
             {"world", i},
             {"novelty", s.novelty},
             {"diversity", s.diversity},
             {"fitness", finite_or_null(s.fitness)},
             {"healthy", s.healthy},
             {"hparams", hparams_json(rep.rollout_hparams[i])},
             {"ep", c.persistence},
             {"species_entropy", c.entropy_mean},
             {"c_eff", c.complexity_mean}};
    metrics_ << rec.dump() << "\n";
    sum_f += s.fitness;
    sum_n += s.novelty;
    sum_d += s.diversity;
    if (s.healthy) {
      ++healthy;
      sum_fh += s.fitness;
    }
  }
  const double p = static_cast<double>(rep.scores.size());
  json reps = json::array();
  for (const Replacement& r : rep.replacements) {
    reps.push_back({{"child", r.child}, {"parent", r.parent}, {"hparams", hparams_json(r.after)}});
  }
  json sum{{"t", rep.t},
           {"mean_fitness", finite_or_null(sum_f / p)},
           {"mean_fitness_healthy", healthy ? json(sum_fh / static_cast<double>(healthy)) : json(nullptr)},
           {"mean_novelty", sum_n / p},
           {"mean_diversity", sum_d / p},
           {"healthy_worlds", healthy},
           {"archive_size", rep.archive_size},
           {"exploited", rep.exploited},
           {"replacements", reps}};
  summary_ << sum.dump() << "\n";
  metrics_.flush();
  summary_.flush();

  char line[160];
  std::snprintf(line, sizeof line, "t=%llu  mean F=%.4f  mean N=%.4f  mean D=%.4f  healthy=%zu/%zu  archive=%zu%s",
                static_cast<unsigned long long>(rep.t), sum_fh / std::max<std::size_t>(1, healthy), sum_n / p, sum_d / p,
                healthy, rep.scores.size(), rep.archive_size, rep.exploited ? "  [exploit]" : "");
  if (log_) log_(line);

  if (config_.checkpoint_interval > 0 && rep.t % config_.checkpoint_interval == 0) save(pop);
}

void RunRecorder::on_warning(const std::string& message) {
  if (log_) log_("warning: " + message);
}

void RunRecorder::save(const Population& pop) {
  metrics_.flush();
  summary_.flush();
  Checkpoint cp;
  cp.config = config_;
  cp.population = pop;
  cp.metrics_cursor = std::filesystem::file_size(metrics_path());
  cp.summary_cursor = std::filesystem::file_size(summary_path());
  save_checkpoint(cp, checkpoint_path().string());
  last_saved_ = pop.t;
}

Population run_experiment(const RunConfig& config, const std::string& checkpoint_path, RunRecorder::Logger log) {
  config.validate();
  Population pop;
  std::unique_ptr<RunRecorder> rec;
  if (checkpoint_path.empty()) {
    pop = init_population(config);
    rec = std::make_unique<RunRecorder>(config, log);
  } else {
    Checkpoint cp = load_checkpoint(checkpoint_path);
    if (cp.population.worlds.size() != config.population) throw ConfigError("population size differs from the checkpoint");
    rec = std::make_unique<RunRecorder>(config, log, &cp);
    pop = std::move(cp.population);
  }
  const std::string endpoint = config.embedder == "builtin" ? std::string() : config.embedder;
  auto embedder = make_embedder(endpoint, [&](const std::string& m) { rec->on_warning(m); });
  if (log) log("embedder: " + embedder->name());
  run_population(pop, config, embedder, rec.get());
  rec->save(pop);
  return pop;
}

}  // namespace petri
