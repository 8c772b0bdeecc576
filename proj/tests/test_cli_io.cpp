#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

#include <gtest/gtest.h>

#include "pimap/config.hpp"
#include "pimap/pipeline.hpp"

namespace pimap {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pimap_cli_io_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> fields(const std::string& row) {
  std::vector<std::string> out;
  std::string f;
  std::istringstream in(row);
  while (std::getline(in, f, ',')) out.push_back(f);
  if (!row.empty() && row.back() == ',') out.emplace_back();
  return out;
}

TEST(Config, ParsesKeyValueLines) {
  RunConfig c;
  apply_config_text(c,
                    "# comment line\n"
                    "filter.p_detect = 0.75   # trailing comment\n"
                    "\n"
                    "filter.mode = if\n"
                    "memory.enabled = false\n"
                    "grid.voxel_size=0.1\n"
                    "run.input = demo:moving_box\n",
                    "test");
  EXPECT_EQ(c.filter.p_detect, 0.75);
  EXPECT_EQ(c.filter.mode, UpdateMode::kIndividual);
  EXPECT_FALSE(c.memory.enabled);
  EXPECT_EQ(c.grid.voxel_size, 0.1);
  EXPECT_EQ(c.input, "demo:moving_box");
}

TEST(Config, UnknownKeysAndBadValuesAreRejectedWithTheLine) {
  RunConfig c;
  try {
    apply_config_text(c, "filter.p_detect = 0.9\nfilter.p_detekt = 0.9\n", "cfg");
    FAIL() << "unknown key accepted";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("cfg:2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("p_detekt"), std::string::npos) << e.what();
  }
  EXPECT_THROW(apply_config_text(c, "filter.p_detect = lots\n", "cfg"), std::invalid_argument);
  EXPECT_THROW(apply_config_text(c, "filter.p_detect\n", "cfg"), std::invalid_argument);
  EXPECT_THROW(apply_config_text(c, "memory.enabled = maybe\n", "cfg"), std::invalid_argument);
  EXPECT_THROW(apply_config_text(c, "filter.mode = sometimes\n", "cfg"), std::invalid_argument);
  EXPECT_THROW(apply_config_file(c, "/nonexistent/pimap.cfg"), std::invalid_argument);
}

TEST(Config, ValidateRejectsOutOfRangeValues) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  c.filter.p_detect = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.input = "webcam:0";
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RunConfig{};
  set_config_value(c, "noise.depth_slope", "-1");
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Config, EnvironmentNames) {
  EXPECT_EQ(env_name("filter.p_detect"), "PIMAP_FILTER_P_DETECT");
  EXPECT_EQ(env_name("run.seed"), "PIMAP_RUN_SEED");
}

TEST(Config, EnvironmentOverridesFile) {
  const fs::path dir = scratch("env");
  std::ofstream(dir / "a.cfg") << "filter.p_detect = 0.7\nrun.seed = 5\n";
  RunConfig c;
  apply_config_file(c, dir / "a.cfg");
  const std::map<std::string, std::string> env{{"PIMAP_FILTER_P_DETECT", "0.6"}, {"PIMAP_MEMORY_ENABLED", "0"}};
  apply_environment(c, [&](const char* name) -> const char* {
    auto it = env.find(name);
    return it == env.end() ? nullptr : it->second.c_str();
  });
  EXPECT_EQ(c.filter.p_detect, 0.6);
  EXPECT_EQ(c.seed, 5u);  // not in the environment
  EXPECT_FALSE(c.memory.enabled);
  fs::remove_all(dir);
}

TEST(Config, BadEnvironmentValueNamesTheVariable) {
  RunConfig c;
  try {
    apply_environment(c, [](const char* name) -> const char* {
      return std::string(name) == "PIMAP_FILTER_CLUTTER" ? "abc" : nullptr;
    });
    FAIL() << "bad value accepted";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("PIMAP_FILTER_CLUTTER"), std::string::npos) << e.what();
  }
}

TEST(Config, EffectiveConfigRoundTrips) {
  RunConfig c;
  set_config_value(c, "filter.p_detect", "0.8125");
  set_config_value(c, "filter.sigma_slope", "0.0123456789");
  set_config_value(c, "filter.mode", "if");
  set_config_value(c, "memory.trigger_points", "321");
  set_config_value(c, "noise.missed_probability", "0.25");
  set_config_value(c, "camera.width", "320");
  set_config_value(c, "eval.splat", "point");
  set_config_value(c, "run.output", "/tmp/some where");
  const std::string text = effective_config_text(c);
  RunConfig back;
  apply_config_text(back, text, "effective");
  EXPECT_EQ(effective_config_text(back), text);
  for (const std::string& key : config_keys()) EXPECT_EQ(get_config_value(back, key), get_config_value(c, key)) << key;
  // Every key appears exactly once.
  for (const std::string& key : config_keys()) {
    std::size_t n = 0;
    for (const std::string& l : lines(text)) n += l.rfind(key + " =", 0) == 0;
    EXPECT_EQ(n, 1u) << key;
  }
}

TEST(Config, CameraKeysOverrideTheScene) {
  RunConfig c;
  c.input = "demo:moving_box";
  EXPECT_NE(resolve_scene(c).camera.width, 96);
  set_config_value(c, "camera.width", "96");
  EXPECT_TRUE(c.camera_set);
  EXPECT_EQ(resolve_scene(c).camera.width, 96);
  set_config_value(c, "noise.missed_probability", "0.5");
  EXPECT_EQ(resolve_scene(c).noise.missed_probability, 0.5);
  c.input = "demo:nothing";
  EXPECT_THROW(resolve_scene(c), std::invalid_argument);
}

RunConfig small_run(const fs::path& out, int frames) {
  RunConfig c;
  c.input = "demo:moving_box";
  c.frames = frames;
  c.grid.log2_dim = 6;
  c.output = out;
  return c;
}

TEST(RunSequence, ZeroFramesWritesHeadersOnly) {
  const fs::path out = scratch("zero");
  std::ostringstream log;
  const RunSummary s = run_sequence(small_run(out, 0), log);
  EXPECT_EQ(s.frames, 0);
  EXPECT_EQ(s.metric_rows, 0u);
  EXPECT_FALSE(s.mean_f1);
  EXPECT_EQ(lines(slurp(out / "metrics.csv")).size(), 1u);
  EXPECT_EQ(lines(slurp(out / "timing.csv")).size(), 1u);
  EXPECT_TRUE(fs::exists(out / "config.txt"));
  fs::remove_all(out);
}

TEST(RunSequence, OneRowPerFramePlusMean) {
  const fs::path out = scratch("fifty");
  std::ostringstream log;
  const RunSummary s = run_sequence(small_run(out, 50), log);
  EXPECT_EQ(s.frames, 50);
  EXPECT_EQ(s.metric_rows, 50u);
  ASSERT_TRUE(s.mean_f1);
  EXPECT_GT(*s.mean_f1, 0.3);
  EXPECT_EQ(log.str(), "");

  const auto rows = lines(slurp(out / "metrics.csv"));
  ASSERT_EQ(rows.size(), 52u);
  const std::size_t width = fields(rows[0]).size();
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(fields(rows[i]).size(), width) << rows[i];
  EXPECT_EQ(fields(rows[1])[0], "0");
  EXPECT_EQ(fields(rows[50])[0], "49");
  EXPECT_EQ(fields(rows[51])[0], "mean");
  EXPECT_EQ(lines(slurp(out / "timing.csv")).size(), 51u);

  // Map exports in both formats for every frame.
  std::size_t txt = 0, bin = 0;
  for (const auto& e : fs::directory_iterator(out / "maps")) (e.path().extension() == ".txt" ? txt : bin)++;
  EXPECT_EQ(txt, 50u);
  EXPECT_EQ(bin, 50u);
  std::ifstream map(out / "maps" / "000049.map", std::ios::binary);
  const LabeledVoxelMap last = read_map_binary(map);
  EXPECT_EQ(last.step, 49);
  EXPECT_GT(last.occupied().size(), 0u);

  // The written configuration reproduces the run.
  RunConfig back;
  apply_config_file(back, out / "config.txt");
  EXPECT_EQ(effective_config_text(back), slurp(out / "config.txt"));
  fs::remove_all(out);
}

TEST(RunSequence, SameSeedSameOutput) {
  const fs::path a = scratch("seed_a"), b = scratch("seed_b"), c = scratch("seed_c");
  std::ostringstream log;
  run_sequence(small_run(a, 12), log);
  run_sequence(small_run(b, 12), log);
  RunConfig other = small_run(c, 12);
  other.seed = 99;
  run_sequence(other, log);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "maps" / "000011.map"), slurp(b / "maps" / "000011.map"));
  EXPECT_NE(slurp(a / "maps" / "000011.map"), slurp(c / "maps" / "000011.map"));
  for (const auto& p : {a, b, c}) fs::remove_all(p);
}

TEST(RunSequence, ReplayMatchesLiveSimulation) {
  const fs::path seq = scratch("seq"), live = scratch("live"), replay = scratch("replay"), scored = scratch("scored");
  RunConfig c = small_run(live, 8);
  const Scene scene = resolve_scene(c);
  simulate_to_directory(scene, seq, c.seed, c.grid.voxel_size, c.grid.log2_dim);
  std::ostringstream log;
  run_sequence(c, log);
  RunConfig r = c;
  r.input = "replay:" + seq.string();
  r.output = replay;
  run_sequence(r, log);
  EXPECT_EQ(log.str(), "");
  EXPECT_EQ(slurp(live / "maps" / "000007.map"), slurp(replay / "maps" / "000007.map"));
  EXPECT_EQ(slurp(live / "metrics.csv"), slurp(replay / "metrics.csv"));

  // Offline scoring of the exports gives the same 3D metrics as the live run.
  RunConfig e = c;
  e.output = scored;
  EXPECT_EQ(evaluate_directory(live / "maps", seq, e, log), 8u);
  const auto live_rows = lines(slurp(live / "metrics.csv"));
  const auto scored_rows = lines(slurp(scored / "metrics.csv"));
  ASSERT_EQ(scored_rows.size(), live_rows.size());
  const auto cols = metrics_columns();
  for (std::size_t i = 1; i + 1 < live_rows.size(); ++i) {
    const auto lf = fields(live_rows[i]), sf = fields(scored_rows[i]);
    for (const std::string name : {"step", "ahd", "precision", "recall", "f1", "adm", "miou3d", "mf1_3d"}) {
      const auto col = static_cast<std::size_t>(std::find(cols.begin(), cols.end(), name) - cols.begin());
      EXPECT_EQ(lf[col], sf[col]) << name << " row " << i;
    }
  }
  for (const auto& p : {seq, live, replay, scored}) fs::remove_all(p);
}

TEST(RunSequence, MalformedFrameNamesTheFile) {
  const fs::path seq = scratch("bad_seq"), out = scratch("bad_out");
  RunConfig c = small_run(out, 3);
  simulate_to_directory(resolve_scene(c), seq, c.seed, c.grid.voxel_size, c.grid.log2_dim);
  { std::ofstream(seq / "frames" / "000001.depth", std::ios::binary) << "DPTH"; }
  c.input = "replay:" + seq.string();
  std::ostringstream log;
  try {
    run_sequence(c, log);
    FAIL() << "truncated frame accepted";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("000001.depth"), std::string::npos) << e.what();
  }
  for (const auto& p : {seq, out}) fs::remove_all(p);
}

int cli(const std::string& args) {
  const std::string cmd = std::string(PIMAP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

TEST(Cli, SimulateMapEval) {
  const fs::path dir = scratch("cli");
  const std::string seq = (dir / "seq").string(), out = (dir / "out").string(), ev = (dir / "ev").string();
  ASSERT_EQ(cli("simulate --scene demo:moving_box --frames 4 --map-size 12.8 --out " + seq), 0);
  EXPECT_TRUE(fs::exists(dir / "seq" / "scene.json"));
  EXPECT_TRUE(fs::exists(dir / "seq" / "frames" / "000003.depth"));
  ASSERT_EQ(cli("map --input " + seq + " --map-size 12.8 --mode if --no-memory --out " + out), 0);
  const std::string cfg = slurp(dir / "out" / "config.txt");
  EXPECT_NE(cfg.find("filter.mode = if"), std::string::npos);
  EXPECT_NE(cfg.find("memory.enabled = false"), std::string::npos);
  EXPECT_NE(cfg.find("grid.log2_dim = 6"), std::string::npos);
  EXPECT_EQ(lines(slurp(dir / "out" / "metrics.csv")).size(), 6u);
  ASSERT_EQ(cli("eval --maps " + out + "/maps --sequence " + seq + " --out " + ev), 0);
  EXPECT_EQ(lines(slurp(dir / "ev" / "metrics.csv")).size(), 6u);
  fs::remove_all(dir);
}

TEST(Cli, FlagBeatsEnvironmentBeatsFile) {
  const fs::path dir = scratch("cli_prec");
  std::ofstream(dir / "run.cfg") << "filter.p_detect = 0.7\nfilter.clutter = 0.5\nrun.seed = 3\n";
  const std::string base = "map --input demo:moving_box --frames 0 --config " + (dir / "run.cfg").string();
  ASSERT_EQ(cli(base + " --seed 4 --out " + (dir / "a").string()), 0);
  ASSERT_EQ(std::system(("PIMAP_FILTER_P_DETECT=0.6 PIMAP_RUN_SEED=8 " + std::string(PIMAP_CLI_PATH) + " " + base +
                         " --seed 4 --out " + (dir / "b").string() + " > /dev/null 2>&1")
                            .c_str()),
            0);
  const std::string a = slurp(dir / "a" / "config.txt"), b = slurp(dir / "b" / "config.txt");
  EXPECT_NE(a.find("filter.p_detect = 0.7\n"), std::string::npos);
  EXPECT_NE(a.find("run.seed = 4\n"), std::string::npos);
  EXPECT_NE(b.find("filter.p_detect = 0.6\n"), std::string::npos);
  EXPECT_NE(b.find("filter.clutter = 0.5\n"), std::string::npos);
  EXPECT_NE(b.find("run.seed = 4\n"), std::string::npos);
  EXPECT_NE(cli("map --input demo:moving_box --frames 0 --set filter.nope=1 --out " + (dir / "c").string()), 0);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace pimap
