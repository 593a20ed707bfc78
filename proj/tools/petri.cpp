#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <map>

#include "petri/analysis/complexity.hpp"
#include "petri/runio/recorder.hpp"

using namespace petri;
namespace fs = std::filesystem;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

void log_line(const std::string& s) { std::cerr << s << std::endl; }

RunConfig build_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig c = path.empty() ? RunConfig{} : load_config(path);
  for (const auto& o : overrides) apply_override(c, o);
  return c;
}

nlohmann::json report_json(const ComplexityReport& r) {
  return {{"ep", r.persistence},
          {"species_entropy", r.species_entropy},
          {"c_eff", r.effective_complexity},
          {"entropy_mean", r.entropy_mean},
          {"entropy_std", r.entropy_std},
          {"c_eff_mean", r.complexity_mean},
          {"c_eff_std", r.complexity_std}};
}

// Rolls a copy of every world forward and hands back the trajectories.
std::vector<Trajectory> preview_rollouts(const Checkpoint& cp, std::size_t segments) {
  std::vector<Trajectory> out;
  for (WorldState w : cp.population.worlds) out.push_back(rollout_meta_iteration(w, segments));
  return out;
}

int analyze_checkpoint(const std::string& path, const std::string& log_path, std::size_t segments) {
  const Checkpoint cp = load_checkpoint(path);
  const auto trajs = preview_rollouts(cp, segments ? segments : cp.config.segments_per_iteration);
  const fs::path out = log_path.empty() ? fs::path(path).parent_path() / "metrics.jsonl" : fs::path(log_path);
  std::ofstream f(out, std::ios::app);
  if (!f) throw Error("cannot append to " + out.string());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& c = cp.population.worlds[i].config;
    nlohmann::json rec{{"record", "complexity"}, {"t", cp.population.t}, {"world", i}, {"source", "checkpoint"}};
    if (trajs[i].empty()) {
      rec["healthy"] = false;
    } else {
      rec.update(report_json(analyze_trajectory(trajs[i], c.height, c.width, cp.config.grid_symbols)));
      rec["healthy"] = true;
    }
    f << rec.dump() << "\n";
    std::cout << "world " << i << ": EP=" << rec.value("ep", 0.0) << " C_eff=" << rec.value("c_eff_mean", 0.0) << "\n";
  }
  std::cout << "appended " << trajs.size() << " complexity rows to " << out.string() << "\n";
  return 0;
}

int analyze_frames(const std::string& dir, const std::string& log_path, std::size_t agents, GridSymbols mode) {
  std::map<fs::path, std::vector<fs::path>> groups;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.ends_with("_sheet.png")) continue;
    if (e.is_regular_file() && e.path().extension() == ".png") groups[e.path().parent_path()].push_back(e.path());
  }
  if (groups.empty()) throw Error("no PNG frames under " + dir);
  const fs::path out = log_path.empty() ? fs::path(dir) / "analysis.jsonl" : fs::path(log_path);
  std::ofstream f(out, std::ios::app);
  if (!f) throw Error("cannot append to " + out.string());
  for (auto& [group, files] : groups) {
    std::sort(files.begin(), files.end());
    Trajectory traj;
    std::size_t h = 0, w = 0;
    for (const auto& p : files) {
      const Image img = read_png(p.string());
      if (traj.empty()) h = img.height, w = img.width;
      if (img.height != h || img.width != w) throw Error("frame sizes differ under " + group.string());
      traj.push_back(frame_from_image(img, agents));
    }
    nlohmann::json rec{{"record", "complexity"}, {"source", group.string()}, {"frames", files.size()}};
    rec.update(report_json(analyze_trajectory(traj, h, w, mode)));
    f << rec.dump() << "\n";
    std::cout << group.string() << ": EP=" << rec["ep"] << " C_eff=" << rec["c_eff_mean"] << "\n";
  }
  return 0;
}

int render(const std::string& path, const std::string& out_dir, std::size_t segments, std::size_t columns) {
  const Checkpoint cp = load_checkpoint(path);
  const auto trajs = preview_rollouts(cp, segments ? segments : cp.config.segments_per_iteration);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& c = cp.population.worlds[i].config;
    char sub[32];
    std::snprintf(sub, sizeof sub, "w%03zu", i);
    const fs::path dir = fs::path(out_dir) / sub;
    fs::create_directories(dir);
    std::vector<Image> images;
    for (const Frame& fr : trajs[i]) {
      images.push_back(render_frame(fr, c.height, c.width));
      write_png(images.back(), (dir / frame_filename(cp.config.run_id, cp.population.t + 1, fr.step)).string());
    }
    if (!images.empty()) write_png(montage(images, columns), (fs::path(out_dir) / (std::string(sub) + "_sheet.png")).string());
    std::cout << "world " << i << ": " << images.size() << " frames -> " << dir.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"petri: population-based training of multi-agent neural cellular automata"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string config_path, mode, out_dir, resume, log_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  std::size_t threads = 0, segments = 0, columns = 8, agents = 3;
  std::string symbols;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "run an experiment");
  run->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  run->add_option("--mode", mode, "pbt | random-search | fixed");
  auto* seed_opt = run->add_option("--seed", seed, "run seed");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--set", overrides, "override, e.g. substrate.height=32")->take_all();
  run->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  run->add_option("--threads", threads, "worker threads for rollouts");
  run->add_flag("--quiet", quiet, "suppress progress lines");

  auto* analyze = app.add_subcommand("analyze", "edge-of-chaos metrics for a checkpoint or a frame directory");
  std::string target;
  analyze->add_option("target", target, "checkpoint file or directory of PNG frames")->required()->check(CLI::ExistingPath);
  analyze->add_option("--log", log_path, "JSONL file to append to");
  analyze->add_option("--segments", segments, "segments to roll out from a checkpoint (default: config)");
  analyze->add_option("--agents", agents, "agent count for frame directories")->check(CLI::PositiveNumber);
  analyze->add_option("--symbols", symbols, "winner-packed | winner-byte | rgb");

  auto* rend = app.add_subcommand("render", "export PNG frames and contact sheets from a checkpoint");
  std::string ckpt;
  rend->add_option("checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  rend->add_option("--out", out_dir, "output directory")->required();
  rend->add_option("--segments", segments, "segments to roll out (default: config)");
  rend->add_option("--columns", columns, "contact sheet columns")->check(CLI::PositiveNumber);

  auto* print = app.add_subcommand("config-print", "print the effective configuration");
  print->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  print->add_option("--set", overrides, "override, e.g. population=4")->take_all();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  RunConfig config;
  try {
    if (*run) {
      if (!resume.empty()) {
        config = load_checkpoint(resume).config;
        if (!config_path.empty()) config = load_config(config_path);
        for (const auto& o : overrides) apply_override(config, o);
      } else {
        config = build_config(config_path, overrides);
      }
      if (!mode.empty()) config.mode = parse_run_mode(mode);
      if (*seed_opt) config.seed = seed;
      if (!out_dir.empty()) config.output_dir = out_dir;
      if (threads) config.threads = threads;
      config.validate();
    } else if (*print) {
      config = build_config(config_path, overrides);
      config.validate();
      std::cout << config_to_json(config) << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::endl;
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kRuntime;
  }

  try {
    if (*run) {
      const Population pop = run_experiment(config, resume, quiet ? RunRecorder::Logger{} : RunRecorder::Logger(log_line));
      std::size_t healthy = 0;
      for (const auto& w : pop.worlds) healthy += w.healthy;
      std::cout << "finished t=" << pop.t << " healthy=" << healthy << "/" << pop.worlds.size()
                << " archive=" << pop.archive.size() << " -> " << config.output_dir << "\n";
      return 0;
    }
    if (*analyze) {
      if (fs::is_directory(target)) {
        const GridSymbols m = symbols.empty() ? GridSymbols::kWinnerPacked : parse_grid_symbols(symbols);
        return analyze_frames(target, log_path, agents, m);
      }
      return analyze_checkpoint(target, log_path, segments);
    }
    if (*rend) return render(ckpt, out_dir, segments, columns);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kRuntime;
  }
  return 0;
}
