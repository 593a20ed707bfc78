#include "petri/runio/config.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <type_traits>

namespace petri {

using nlohmann::json;

namespace {

json to_json(const RunConfig& c) {
  const auto& s = c.substrate;
  return json{
      {"mode", to_string(c.mode)},
      {"substrate",
       {{"height", s.height},
        {"width", s.width},
        {"agents", s.agents},
        {"attack_channels", s.layout.attack},
        {"defense_channels", s.layout.defense},
        {"hidden_channels", s.layout.hidden},
        {"hidden_width", s.hidden_width},
        {"alpha", s.alpha}}},
      {"population", c.population},
      {"meta_iterations", c.meta_iterations},
      {"segments_per_iteration", c.segments_per_iteration},
      {"exploit_interval", c.exploit_interval},
      {"replace_fraction", c.replace_fraction},
      {"archive_increment", c.archive_increment},
      {"knn", c.knn},
      {"archive_capacity", c.archive_capacity},
      {"archive_reset_period", c.archive_reset_period},
      {"archive_rank_by_novelty", c.archive_rank_by_novelty},
      {"p_cross", c.p_cross},
      {"p_pert", c.p_pert},
      {"weight_noise", c.weight_noise},
      {"extended_space", c.extended_space},
      {"sample_initial_hparams", c.sample_initial_hparams},
      {"diversity_stride", c.diversity_stride},
      {"embedder", c.embedder},
      {"grid_symbols", to_string(c.grid_symbols)},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"run_id", c.run_id},
      {"checkpoint_interval", c.checkpoint_interval},
      {"frame_export_stride", c.frame_export_stride},
      {"threads", c.threads},
  };
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!j.at(key).is_number_unsigned()) throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
  }
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void check_known(const json& j, const json& reference, const std::string& prefix) {
  for (const auto& [key, value] : j.items()) {
    if (!reference.contains(key)) throw ConfigError("unknown config key '" + prefix + key + "'");
    if (value.is_object() != reference[key].is_object()) throw ConfigError("config key '" + prefix + key + "' has the wrong type");
    if (value.is_object()) check_known(value, reference[key], prefix + key + ".");
  }
}

void from_json_into(const json& j, RunConfig& c) {
  check_known(j, to_json(RunConfig{}), "");
  if (j.contains("mode")) c.mode = parse_run_mode(j["mode"].get<std::string>());
  if (j.contains("substrate")) {
    const json& s = j["substrate"];
    take(s, "height", c.substrate.height);
    take(s, "width", c.substrate.width);
    take(s, "agents", c.substrate.agents);
    take(s, "attack_channels", c.substrate.layout.attack);
    take(s, "defense_channels", c.substrate.layout.defense);
    take(s, "hidden_channels", c.substrate.layout.hidden);
    take(s, "hidden_width", c.substrate.hidden_width);
    take(s, "alpha", c.substrate.alpha);
  }
  take(j, "population", c.population);
  take(j, "meta_iterations", c.meta_iterations);
  take(j, "segments_per_iteration", c.segments_per_iteration);
  take(j, "exploit_interval", c.exploit_interval);
  take(j, "replace_fraction", c.replace_fraction);
  take(j, "archive_increment", c.archive_increment);
  take(j, "knn", c.knn);
  take(j, "archive_capacity", c.archive_capacity);
  take(j, "archive_reset_period", c.archive_reset_period);
  take(j, "archive_rank_by_novelty", c.archive_rank_by_novelty);
  take(j, "p_cross", c.p_cross);
  take(j, "p_pert", c.p_pert);
  take(j, "weight_noise", c.weight_noise);
  take(j, "extended_space", c.extended_space);
  take(j, "sample_initial_hparams", c.sample_initial_hparams);
  take(j, "diversity_stride", c.diversity_stride);
  take(j, "embedder", c.embedder);
  if (j.contains("grid_symbols")) c.grid_symbols = parse_grid_symbols(j["grid_symbols"].get<std::string>());
  take(j, "seed", c.seed);
  take(j, "output_dir", c.output_dir);
  take(j, "run_id", c.run_id);
  take(j, "checkpoint_interval", c.checkpoint_interval);
  take(j, "frame_export_stride", c.frame_export_stride);
  take(j, "threads", c.threads);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid config: " + what);
}

}  // namespace

std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::kPbt: return "pbt";
    case RunMode::kRandomSearch: return "random-search";
    case RunMode::kFixed: return "fixed";
  }
  return "?";
}

RunMode parse_run_mode(const std::string& s) {
  if (s == "pbt") return RunMode::kPbt;
  if (s == "random-search") return RunMode::kRandomSearch;
  if (s == "fixed") return RunMode::kFixed;
  throw ConfigError("unknown mode '" + s + "' (expected pbt, random-search or fixed)");
}

std::string to_string(GridSymbols m) {
  switch (m) {
    case GridSymbols::kWinner: return "winner-byte";
    case GridSymbols::kWinnerPacked: return "winner-packed";
    case GridSymbols::kRgb: return "rgb";
  }
  return "?";
}

GridSymbols parse_grid_symbols(const std::string& s) {
  if (s == "winner-byte") return GridSymbols::kWinner;
  if (s == "winner-packed") return GridSymbols::kWinnerPacked;
  if (s == "rgb") return GridSymbols::kRgb;
  throw ConfigError("unknown grid_symbols '" + s + "' (expected winner-packed, winner-byte or rgb)");
}

void RunConfig::validate() const {
  substrate.validate();
  require(substrate.height >= 8 && substrate.width >= 8, "substrate grid must be at least 8x8");
  require(population >= 1, "population must be >= 1");
  require(meta_iterations >= 1, "meta_iterations must be >= 1");
  require(segments_per_iteration >= 1, "segments_per_iteration must be >= 1");
  require(exploit_interval >= 1, "exploit_interval must be >= 1");
  require(replace_fraction >= 0.0 && replace_fraction <= 0.5, "replace_fraction must be in [0, 0.5]");
  require(archive_increment >= 1, "archive_increment must be >= 1");
  require(knn >= 1, "knn must be >= 1");
  require(archive_capacity >= 1, "archive_capacity must be >= 1");
  require(p_cross >= 0.0 && p_cross <= 1.0, "p_cross must be in [0, 1]");
  require(p_pert >= 0.0 && p_pert <= 1.0, "p_pert must be in [0, 1]");
  require(weight_noise >= 0.0 && std::isfinite(weight_noise), "weight_noise must be >= 0");
  require(diversity_stride >= 1, "diversity_stride must be >= 1");
  require(!embedder.empty(), "embedder must be 'builtin' or host:port");
  require(!run_id.empty() && run_id.find('/') == std::string::npos, "run_id must be a plain name");
  require(!output_dir.empty(), "output_dir must be set");
  require(threads >= 1, "threads must be >= 1");
}

std::string config_to_json(const RunConfig& config, int indent) { return to_json(config).dump(indent); }

RunConfig config_from_json(const std::string& text, RunConfig base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  from_json_into(j, base);
  return base;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json(ss.str());
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // bare strings
  }
  json patch = json::object();
  json* node = &patch;
  std::size_t start = 0;
  for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) {
    node = &(*node)[key.substr(start, dot - start)];
  }
  (*node)[key.substr(start)] = value;
  from_json_into(patch, config);
}

}  // namespace petri
