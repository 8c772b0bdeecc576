// pimap command-line driver: simulate, map, eval, bench.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "pimap/config.hpp"
#include "pimap/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<int> frames;
  std::optional<double> map_size;
  std::optional<double> voxel;
  std::optional<std::string> mode;
  bool no_memory = false;
  std::optional<std::string> out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config_file, "Configuration file (key = value lines)");
  app->add_option("--seed", f.seed, "Random seed");
  app->add_option("--frames", f.frames, "Number of frames to process");
  app->add_option("--map-size", f.map_size, "Map extent per axis in meters; extent / voxel must be a power of two");
  app->add_option("--voxel", f.voxel, "Voxel edge length in meters");
  app->add_option("--mode", f.mode, "Update mode")->check(CLI::IsMember({"if", "cf"}));
  app->add_flag("--no-memory", f.no_memory, "Disable the template memory");
  app->add_option("--out", f.out, "Output directory");
  app->add_option("--set", f.sets, "Extra key=value configuration override (repeatable)");
}

int log2_for_extent(double extent, double voxel) {
  const double cells = extent / voxel;
  const int n = static_cast<int>(std::lround(std::log2(cells)));
  if (n < 1 || std::abs(std::ldexp(1.0, n) - cells) > 1e-6 * cells)
    throw std::invalid_argument("--map-size / --voxel must be a power of two, got " + std::to_string(cells));
  return n;
}

pimap::RunConfig resolve(const CommonFlags& f) {
  pimap::RunConfig c;
  if (!f.config_file.empty()) pimap::apply_config_file(c, f.config_file);
  pimap::apply_environment(c, [](const char* name) { return std::getenv(name); });
  if (f.seed) c.seed = *f.seed;
  if (f.frames) c.frames = *f.frames;
  if (f.voxel) c.grid.voxel_size = *f.voxel;
  if (f.map_size) c.grid.log2_dim = log2_for_extent(*f.map_size, c.grid.voxel_size);
  if (f.mode) c.filter.mode = pimap::parse_update_mode(*f.mode);
  if (f.no_memory) c.memory.enabled = false;
  if (f.out) c.output = *f.out;
  for (const std::string& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    pimap::set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  c.validate();
  return c;
}

int run_simulate(const CommonFlags& f, const std::string& scene) {
  pimap::RunConfig c = resolve(f);
  if (!scene.empty()) c.input = scene.find(':') == std::string::npos ? "scene:" + scene : scene;
  const pimap::Scene s = pimap::resolve_scene(c);
  pimap::simulate_to_directory(s, c.output, c.seed, c.grid.voxel_size, c.grid.log2_dim);
  std::ofstream(c.output / "scene.json") << pimap::scene_to_json(s) << '\n';
  std::cout << "wrote " << s.frames << " frames of '" << s.name << "' to " << c.output.string() << '\n';
  return 0;
}

int run_map(const CommonFlags& f, const std::string& input) {
  pimap::RunConfig c = resolve(f);
  if (!input.empty()) c.input = input.find(':') == std::string::npos ? "replay:" + input : input;
  const pimap::RunSummary s = pimap::run_sequence(c, std::cerr);
  std::cout << "mapped " << s.frames << " frames, mean " << std::fixed << std::setprecision(1) << s.mean_total_ms
            << " ms/frame";
  if (s.mean_f1) std::cout << ", mean F1 " << std::setprecision(3) << *s.mean_f1;
  std::cout << "; outputs in " << c.output.string() << '\n';
  return 0;
}

int run_eval(const CommonFlags& f, const std::string& maps, const std::string& sequence) {
  pimap::RunConfig c = resolve(f);
  const std::size_t n = pimap::evaluate_directory(maps, sequence, c, std::cerr);
  std::cout << "scored " << n << " frames; metrics in " << (c.output / "metrics.csv").string() << '\n';
  return n > 0 ? 0 : 1;
}

int run_bench(const CommonFlags& f, std::vector<double> extents, int width, int height) {
  pimap::RunConfig base = resolve(f);
  const int frames = f.frames ? *f.frames : 10;
  std::cout << "extent_m,log2_dim,frames,width,height";
  for (int s = 0; s < pimap::kStageCount; ++s)
    std::cout << ',' << pimap::to_string(static_cast<pimap::Stage>(s)) << "_ms";
  std::cout << '\n';
  for (double extent : extents) {
    pimap::RunConfig c = base;
    c.grid.log2_dim = log2_for_extent(extent, c.grid.voxel_size);
    pimap::Scene scene = pimap::demo::static_objects(frames);
    const double scale = static_cast<double>(width) / scene.camera.width;
    scene.camera.width = width;
    scene.camera.height = height;
    scene.camera.focal *= scale;
    scene.camera.cx = width / 2.0;
    scene.camera.cy = height / 2.0;
    scene.camera.max_range = extent / 2.0;
    pimap::Rng rng(c.seed);
    pimap::Mapper mapper(pimap::mapper_options(c, scene.camera), c.seed);
    pimap::StageTimes sum;
    for (pimap::Step k = 0; k < frames; ++k) {
      const pimap::RenderedFrame r = pimap::render_frame(scene, k, rng);
      pimap::FrameReport report;
      mapper.process(r.frame, &report);
      for (int s = 0; s < pimap::kStageCount; ++s) sum.ms[s] += report.times.ms[s];
    }
    std::cout << extent << ',' << c.grid.log2_dim << ',' << frames << ',' << width << ',' << height;
    for (double ms : sum.ms) std::cout << ',' << std::fixed << std::setprecision(3) << ms / frames;
    std::cout << std::defaultfloat << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Panoptic instance-aware particle mapping"};
  app.require_subcommand(1);

  CommonFlags sim_flags, map_flags, eval_flags, bench_flags;
  std::string scene, map_input, eval_maps, eval_seq;
  std::vector<double> extents = {12.8, 25.6};
  int bench_width = 640, bench_height = 480;

  CLI::App* sim = app.add_subcommand("simulate", "Generate a synthetic sequence and save it as a replay directory");
  add_common(sim, sim_flags);
  sim->add_option("--scene", scene, "demo:two_objects | demo:static_objects | demo:moving_box | scene JSON file");

  CLI::App* map = app.add_subcommand("map", "Replay a sequence (or simulate one) through the mapper and export maps");
  add_common(map, map_flags);
  map->add_option("--input", map_input, "Replay directory, or demo:<name> / scene:<file>");

  CLI::App* eval = app.add_subcommand("eval", "Score exported maps against a sequence's ground truth");
  add_common(eval, eval_flags);
  eval->add_option("--maps", eval_maps, "Directory holding NNNNNN.map exports")->required();
  eval->add_option("--sequence", eval_seq, "Replay directory with gt/")->required();

  CLI::App* bench = app.add_subcommand("bench", "Per-stage timing over map extents");
  add_common(bench, bench_flags);
  bench->add_option("--extents", extents, "Map extents in meters")->delimiter(',');
  bench->add_option("--width", bench_width, "Image width");
  bench->add_option("--height", bench_height, "Image height");

  CLI11_PARSE(app, argc, argv);
  try {
    if (sim->parsed()) return run_simulate(sim_flags, scene);
    if (map->parsed()) return run_map(map_flags, map_input);
    if (eval->parsed()) return run_eval(eval_flags, eval_maps, eval_seq);
    if (bench->parsed()) return run_bench(bench_flags, extents, bench_width, bench_height);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
