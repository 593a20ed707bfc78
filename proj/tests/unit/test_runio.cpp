#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "petri/runio/image.hpp"
#include "petri/runio/recorder.hpp"

using namespace petri;
namespace fs = std::filesystem;

namespace {

RunConfig small_config(const fs::path& out) {
  RunConfig c;
  c.substrate.height = 8;
  c.substrate.width = 8;
  c.substrate.agents = 2;
  c.substrate.layout = ChannelLayout{2, 2, 2};
  c.substrate.hidden_width = 8;
  c.population = 4;
  c.meta_iterations = 4;
  c.segments_per_iteration = 2;
  c.exploit_interval = 2;
  c.replace_fraction = 0.5;
  c.seed = 11;
  c.output_dir = out.string();
  c.checkpoint_interval = 2;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("petri_runio_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream f(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(f, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Config, DefaultsMatchExperimentScale) {
  const RunConfig c;
  EXPECT_EQ(c.population, 30u);
  EXPECT_EQ(c.meta_iterations, 500u);
  EXPECT_EQ(c.segments_per_iteration, 12u);
  EXPECT_EQ(c.exploit_interval, 5u);
  EXPECT_DOUBLE_EQ(c.replace_fraction, 0.25);
  EXPECT_EQ(c.archive_increment, 2u);
  EXPECT_EQ(c.knn, 8u);
  EXPECT_EQ(c.archive_capacity, 256u);
  EXPECT_DOUBLE_EQ(c.p_cross, 0.5);
  EXPECT_DOUBLE_EQ(c.p_pert, 0.1);
  EXPECT_DOUBLE_EQ(c.weight_noise, 0.01);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, JsonRoundTrip) {
  RunConfig c = small_config("/tmp/x");
  c.mode = RunMode::kRandomSearch;
  c.grid_symbols = GridSymbols::kRgb;
  c.substrate.alpha = 0.3f;
  c.embedder = "localhost:7000";
  c.extended_space = true;
  const std::string text = config_to_json(c);
  const RunConfig back = config_from_json(text);
  EXPECT_EQ(config_to_json(back), text);
  EXPECT_EQ(back.mode, RunMode::kRandomSearch);
  EXPECT_EQ(back.grid_symbols, GridSymbols::kRgb);
  EXPECT_EQ(back.substrate.layout.attack, 2u);
  EXPECT_FLOAT_EQ(back.substrate.alpha, 0.3f);
}

TEST(Config, PartialJsonKeepsDefaults) {
  const RunConfig c = config_from_json(R"({"population": 6, "substrate": {"height": 16}})");
  EXPECT_EQ(c.population, 6u);
  EXPECT_EQ(c.substrate.height, 16u);
  EXPECT_EQ(c.substrate.width, 64u);
  EXPECT_EQ(c.meta_iterations, 500u);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(config_from_json(R"({"populaton": 6})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"substrate": {"depth": 2}})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"population": -1})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"population": "many"})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"mode": "annealing"})"), ConfigError);
  EXPECT_THROW(config_from_json("{not json"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/petri.json"), ConfigError);
}

TEST(Config, ValidateNamesField) {
  RunConfig c;
  c.replace_fraction = 0.6;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.substrate.height = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.population = 0;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("population"), std::string::npos);
  }
}

TEST(Config, Overrides) {
  RunConfig c;
  apply_override(c, "substrate.height=32");
  apply_override(c, "population=4");
  apply_override(c, "mode=fixed");
  apply_override(c, "p_pert=0.25");
  apply_override(c, "archive_rank_by_novelty=true");
  apply_override(c, "embedder=127.0.0.1:9000");
  EXPECT_EQ(c.substrate.height, 32u);
  EXPECT_EQ(c.population, 4u);
  EXPECT_EQ(c.mode, RunMode::kFixed);
  EXPECT_DOUBLE_EQ(c.p_pert, 0.25);
  EXPECT_TRUE(c.archive_rank_by_novelty);
  EXPECT_EQ(c.embedder, "127.0.0.1:9000");
  EXPECT_THROW(apply_override(c, "population"), ConfigError);
  EXPECT_THROW(apply_override(c, "substrate.nope=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "population=abc"), ConfigError);
}

TEST(Config, ModeNames) {
  for (RunMode m : {RunMode::kPbt, RunMode::kRandomSearch, RunMode::kFixed}) EXPECT_EQ(parse_run_mode(to_string(m)), m);
  for (GridSymbols g : {GridSymbols::kWinner, GridSymbols::kWinnerPacked, GridSymbols::kRgb}) {
    EXPECT_EQ(parse_grid_symbols(to_string(g)), g);
  }
  EXPECT_EQ(to_string(RunMode::kRandomSearch), "random-search");
  EXPECT_THROW(parse_run_mode("pbt2"), ConfigError);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    cp.config = small_config(scratch("ckpt"));
    cp.population = init_population(cp.config);
    auto embedder = make_embedder("", {});
    cp.config.meta_iterations = 2;
    run_population(cp.population, cp.config, embedder);
    cp.metrics_cursor = 123;
    cp.summary_cursor = 45;
  }
  Checkpoint cp;
};

TEST_F(CheckpointTest, SerializeIsStable) {
  const auto bytes = serialize_checkpoint(cp);
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.population.t, 2u);
  EXPECT_EQ(back.metrics_cursor, 123u);
  EXPECT_EQ(back.summary_cursor, 45u);
  EXPECT_EQ(back.population.archive.size(), cp.population.archive.size());
  EXPECT_EQ(back.population.rng, cp.population.rng);
  ASSERT_EQ(back.population.worlds.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& a = cp.population.worlds[i];
    const auto& b = back.population.worlds[i];
    EXPECT_EQ(a.hparams, b.hparams);
    EXPECT_EQ(a.rng, b.rng);
    EXPECT_EQ(a.steps, b.steps);
    EXPECT_TRUE(a.agents[1].params[2].bit_equal(b.agents[1].params[2]));
    EXPECT_TRUE(a.agents[0].adam.v[0].bit_equal(b.agents[0].adam.v[0]));
    EXPECT_TRUE(a.replicas.back().x.bit_equal(b.replicas.back().x));
  }
}

TEST_F(CheckpointTest, FileRoundTrip) {
  const fs::path path = fs::path(cp.config.output_dir) / "c.bin";
  save_checkpoint(cp, path.string());
  EXPECT_FALSE(fs::exists(path.string() + ".tmp"));
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(path.string())), serialize_checkpoint(cp));
  EXPECT_THROW(load_checkpoint((fs::path(cp.config.output_dir) / "missing.bin").string()), CheckpointError);
}

TEST_F(CheckpointTest, EveryFlippedByteIsCaught) {
  const auto bytes = serialize_checkpoint(cp);
  Rng rng = make_stream(1, 0);
  for (int trial = 0; trial < 200; ++trial) {
    auto bad = bytes;
    bad[uniform_index(rng, bad.size())] ^= static_cast<std::uint8_t>(1 + uniform_index(rng, 255));
    EXPECT_THROW(deserialize_checkpoint(bad), CheckpointError) << trial;
  }
}

TEST_F(CheckpointTest, VersionMagicAndTruncation) {
  const auto bytes = serialize_checkpoint(cp);
  auto wrong_version = bytes;
  wrong_version[8] = static_cast<std::uint8_t>(kCheckpointVersion + 1);
  try {
    deserialize_checkpoint(wrong_version);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  auto wrong_magic = bytes;
  wrong_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(wrong_magic), CheckpointError);
  for (std::size_t len : {std::size_t{0}, std::size_t{7}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(deserialize_checkpoint({bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(len)}),
                 CheckpointError)
        << len;
  }
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(extra), CheckpointError);
}

TEST(Recorder, WritesRunDirectory) {
  const fs::path dir = scratch("recorder");
  RunConfig c = small_config(dir);
  c.frame_export_stride = 4;
  c.sample_initial_hparams = false;
  c.p_pert = 0.0;
  std::vector<std::string> log;
  const Population pop = run_experiment(c, "", [&](const std::string& m) { log.push_back(m); });
  EXPECT_EQ(pop.t, 4u);
  EXPECT_TRUE(fs::exists(dir / "config.json"));
  EXPECT_EQ(config_to_json(load_config((dir / "config.json").string())), config_to_json(c));
  ASSERT_TRUE(fs::exists(dir / "checkpoint.bin"));
  EXPECT_EQ(load_checkpoint((dir / "checkpoint.bin").string()).population.t, 4u);

  const auto metrics = lines(dir / "metrics.jsonl");
  ASSERT_EQ(metrics.size(), 16u);
  const auto first = nlohmann::json::parse(metrics[0]);
  for (const char* key : {"t", "world", "novelty", "diversity", "fitness", "healthy", "hparams", "ep",
                          "species_entropy", "c_eff"}) {
    EXPECT_TRUE(first.contains(key)) << key;
  }
  EXPECT_EQ(first["t"], 1);
  EXPECT_EQ(first["hparams"]["batch_size"], init_population(c).worlds[0].hparams.batch_size);

  const auto summary = lines(dir / "summary.jsonl");
  ASSERT_EQ(summary.size(), 4u);
  const auto s2 = nlohmann::json::parse(summary[1]);
  EXPECT_TRUE(s2["exploited"].get<bool>());
  EXPECT_EQ(s2["replacements"].size(), 2u);
  EXPECT_EQ(s2["archive_size"], 4);
  EXPECT_FALSE(nlohmann::json::parse(summary[0])["exploited"].get<bool>());

  // 2 segments of 4 steps per iteration, stride 4: two frames per world per iteration.
  std::size_t frames = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "frames")) frames += e.path().extension() == ".png";
  EXPECT_EQ(frames, 4u * 4u * 2u);
  EXPECT_TRUE(fs::exists(dir / "frames" / "w002" / frame_filename(c.run_id, 3, 20)));
  EXPECT_FALSE(log.empty());
}

TEST(Recorder, ResumeMatchesUninterrupted) {
  const fs::path full = scratch("full"), part = scratch("part");
  RunConfig a = small_config(full);
  run_experiment(a, "", {});

  RunConfig b = small_config(part);
  b.meta_iterations = 2;
  run_experiment(b, "", {});
  // Stale output past the checkpoint must be discarded on resume.
  std::ofstream(part / "metrics.jsonl", std::ios::app) << "{\"t\": 99}\n";
  b.meta_iterations = 4;
  run_experiment(b, (part / "checkpoint.bin").string(), {});

  EXPECT_EQ(slurp(full / "metrics.jsonl"), slurp(part / "metrics.jsonl"));
  EXPECT_EQ(slurp(full / "summary.jsonl"), slurp(part / "summary.jsonl"));
  const auto ca = load_checkpoint((full / "checkpoint.bin").string());
  auto cb = load_checkpoint((part / "checkpoint.bin").string());
  cb.config.output_dir = ca.config.output_dir;
  EXPECT_EQ(serialize_checkpoint(ca), serialize_checkpoint(cb));
}

TEST(Recorder, ResumeRejectsPopulationMismatch) {
  const fs::path dir = scratch("mismatch");
  RunConfig c = small_config(dir);
  c.meta_iterations = 1;
  run_experiment(c, "", {});
  c.population = 6;
  c.meta_iterations = 2;
  EXPECT_THROW(run_experiment(c, (dir / "checkpoint.bin").string(), {}), ConfigError);
}

TEST(Recorder, FrameFilename) {
  EXPECT_EQ(frame_filename("demo", 3, 120), "demo_t000003_s000120.png");
  EXPECT_EQ(frame_filename("r", 0, 0), "r_t000000_s000000.png");
}

TEST(Render, PureFramesSurviveRoundTrip) {
  const std::size_t h = 6, w = 5, n = 3, cells = h * w;
  Frame f;
  f.weights = Tensor({n + 1, cells});
  f.alive = Tensor({n, cells});
  for (std::size_t i = 0; i < cells; ++i) {
    const std::size_t e = (i * 7) % (n + 1);
    f.weights[e * cells + i] = 1.0f;
    if (e > 0) f.alive[(e - 1) * cells + i] = 1.0f;
  }
  const Frame back = frame_from_image(render_frame(f, h, w), n);
  EXPECT_TRUE(back.weights.bit_equal(f.weights));
  EXPECT_TRUE(back.alive.bit_equal(f.alive));
  EXPECT_THROW(frame_from_image(Image{2, 2, {0, 0, 0}}, n), ShapeError);
}
