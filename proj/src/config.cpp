#include "pimap/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pimap {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw std::invalid_argument(key + ": expected an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, std::string v) {
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double x) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, p);
}

std::string fmt(bool b) { return b ? "true" : "false"; }

struct Entry {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define PIMAP_DOUBLE(name, field)                                                           \
  Entry {                                                                                   \
    name, [](const RunConfig& c) { return fmt(static_cast<double>(c.field)); },             \
        [](RunConfig& c, const std::string& v) { c.field = to_double(name, v); }            \
  }
#define PIMAP_INT(name, field)                                                                      \
  Entry {                                                                                           \
    name, [](const RunConfig& c) { return std::to_string(c.field); },                               \
        [](RunConfig& c, const std::string& v) { c.field = static_cast<decltype(c.field)>(to_int(name, v)); } \
  }
#define PIMAP_BOOL(name, field)                                                  \
  Entry {                                                                        \
    name, [](const RunConfig& c) { return fmt(static_cast<bool>(c.field)); },    \
        [](RunConfig& c, const std::string& v) { c.field = to_bool(name, v); }   \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t = {
        PIMAP_DOUBLE("filter.p_detect", filter.p_detect),
        PIMAP_DOUBLE("filter.p_survive", filter.p_survive),
        PIMAP_DOUBLE("filter.clutter", filter.clutter),
        PIMAP_DOUBLE("filter.process_noise_x", filter.process_noise.x()),
        PIMAP_DOUBLE("filter.process_noise_y", filter.process_noise.y()),
        PIMAP_DOUBLE("filter.process_noise_z", filter.process_noise.z()),
        PIMAP_DOUBLE("filter.sigma_slope", filter.sigma_slope),
        PIMAP_DOUBLE("filter.sigma_offset", filter.sigma_offset),
        PIMAP_DOUBLE("filter.p_transition", filter.p_transition),
        PIMAP_DOUBLE("filter.forget_speed", filter.forget_speed),
        PIMAP_INT("filter.forget_horizon", filter.forget_horizon),
        PIMAP_BOOL("filter.forgetting", filter.forgetting),
        PIMAP_INT("filter.newborns_per_measurement", filter.newborns_per_measurement),
        PIMAP_DOUBLE("filter.newborn_weight", filter.newborn_weight),
        PIMAP_DOUBLE("filter.occupancy_threshold", filter.occupancy_threshold),
        PIMAP_INT("filter.bbox_dilation", filter.bbox_dilation),
        PIMAP_DOUBLE("filter.activation_epsilon", filter.activation_epsilon),
        PIMAP_DOUBLE("filter.match_floor", filter.match_floor),
        Entry{"filter.mode", [](const RunConfig& c) { return std::string(to_string(c.filter.mode)); },
              [](RunConfig& c, const std::string& v) { c.filter.mode = parse_update_mode(v); }},
        PIMAP_INT("grid.log2_dim", grid.log2_dim),
        PIMAP_DOUBLE("grid.voxel_size", grid.voxel_size),
        PIMAP_INT("grid.cell_capacity", grid.cell_capacity),
        PIMAP_INT("grid.gc_frames", gc_frames),
        PIMAP_BOOL("memory.enabled", memory.enabled),
        PIMAP_DOUBLE("memory.completeness_threshold", memory.completeness_threshold),
        PIMAP_INT("memory.completeness_rays", memory.completeness_rays),
        PIMAP_INT("memory.trigger_points", memory.trigger_points),
        PIMAP_DOUBLE("memory.score_threshold", memory.score_threshold),
        PIMAP_INT("memory.ransac_iterations", memory.ransac_iterations),
        PIMAP_DOUBLE("memory.early_exit_score", memory.early_exit_score),
        PIMAP_DOUBLE("memory.prune_score", memory.prune_score),
        PIMAP_INT("memory.icp_iterations", memory.icp_iterations),
        PIMAP_DOUBLE("memory.match_voxel_size", memory.match_voxel_size),
        PIMAP_DOUBLE("camera.focal", camera.focal),
        PIMAP_DOUBLE("camera.cx", camera.cx),
        PIMAP_DOUBLE("camera.cy", camera.cy),
        PIMAP_INT("camera.width", camera.width),
        PIMAP_INT("camera.height", camera.height),
        PIMAP_DOUBLE("camera.max_range", camera.max_range),
        PIMAP_BOOL("camera.override", camera_set),
        PIMAP_INT("run.seed", seed),
        PIMAP_INT("run.frames", frames),
        Entry{"run.input", [](const RunConfig& c) { return c.input; },
              [](RunConfig& c, const std::string& v) { c.input = v; }},
        Entry{"run.output", [](const RunConfig& c) { return c.output.string(); },
              [](RunConfig& c, const std::string& v) { c.output = v; }},
        PIMAP_BOOL("run.export_maps", export_maps),
        PIMAP_BOOL("run.force_resample", force_resample),
        PIMAP_BOOL("eval.enabled", evaluate),
        Entry{"eval.splat",
              [](const RunConfig& c) {
                return std::string(c.splat == Splat::kNearestPixel ? "point" : "square");
              },
              [](RunConfig& c, const std::string& v) {
                if (v == "point")
                  c.splat = Splat::kNearestPixel;
                else if (v == "square")
                  c.splat = Splat::kProjectedSquare;
                else
                  throw std::invalid_argument("eval.splat: expected point or square, got '" + v + "'");
              }},
    };
    for (const char* n : {"depth_slope", "depth_offset", "mislabel_probability", "missed_probability",
                          "speckle_probability", "transform_translation_sigma", "transform_rotation_sigma"}) {
      const std::string key = std::string("noise.") + n;
      t.push_back(Entry{key,
                        [n](const RunConfig& c) {
                          auto it = c.noise_overrides.find(n);
                          return it == c.noise_overrides.end() ? std::string("scene") : fmt(it->second);
                        },
                        [n, key](RunConfig& c, const std::string& v) {
                          if (v == "scene")
                            c.noise_overrides.erase(n);
                          else
                            c.noise_overrides[n] = to_double(key, v);
                        }});
    }
    return t;
  }();
  return table;
}

#undef PIMAP_DOUBLE
#undef PIMAP_INT
#undef PIMAP_BOOL

const Entry& entry(const std::string& key) {
  for (const Entry& e : entries())
    if (e.key == key) return e;
  throw std::invalid_argument("unknown configuration key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  auto wrap = [](const char* prefix, auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string(prefix) + e.what());
    }
  };
  wrap("filter: ", [&] { filter.validate(); });
  wrap("grid: ", [&] { grid.validate(); });
  wrap("memory: ", [&] { memory.validate(); });
  wrap("camera: ", [&] { camera.validate(); });
  if (gc_frames < 0) throw std::invalid_argument("grid.gc_frames must be nonnegative");
  const auto colon = input.find(':');
  const std::string kind = colon == std::string::npos ? "" : input.substr(0, colon);
  if (kind != "demo" && kind != "scene" && kind != "replay")
    throw std::invalid_argument("run.input must start with demo:, scene: or replay:");
  for (const auto& [name, value] : noise_overrides)
    if (!(value >= 0)) throw std::invalid_argument("noise." + name + " must be nonnegative");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Entry& e : entries()) keys.push_back(e.key);
  return keys;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  entry(key).set(config, trim(value));
  if (key.rfind("camera.", 0) == 0 && key != "camera.override") config.camera_set = true;
}

std::string get_config_value(const RunConfig& config, const std::string& key) { return entry(key).get(config); }

void apply_config_text(RunConfig& config, const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(source + ":" + std::to_string(n) + ": expected 'key = value'");
    try {
      set_config_value(config, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(config, ss.str(), path.string());
}

std::string env_name(const std::string& key) {
  std::string name = "PIMAP_";
  for (char c : key) name += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return name;
}

void apply_environment(RunConfig& config, const std::function<const char*(const char*)>& getenv) {
  for (const Entry& e : entries()) {
    const std::string name = env_name(e.key);
    if (const char* v = getenv(name.c_str())) {
      try {
        set_config_value(config, e.key, v);
      } catch (const std::invalid_argument& err) {
        throw std::invalid_argument(name + ": " + err.what());
      }
    }
  }
}

std::string effective_config_text(const RunConfig& config) {
  std::ostringstream out;
  out << "# effective pimap configuration\n";
  for (const Entry& e : entries()) out << e.key << " = " << e.get(config) << '\n';
  return out.str();
}

Scene resolve_scene(const RunConfig& config) {
  const auto colon = config.input.find(':');
  const std::string kind = config.input.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : config.input.substr(colon + 1);
  Scene scene;
  if (kind == "demo") {
    const int frames = config.frames >= 0 ? config.frames : -1;
    if (arg == "two_objects")
      scene = demo::two_objects();
    else if (arg == "static_objects")
      scene = frames >= 0 ? demo::static_objects(frames) : demo::static_objects();
    else if (arg == "moving_box")
      scene = frames >= 0 ? demo::moving_box(frames, config.grid.voxel_size)
                          : demo::moving_box(30, config.grid.voxel_size);
    else
      throw std::invalid_argument("unknown demo scene '" + arg + "' (two_objects, static_objects, moving_box)");
  } else if (kind == "scene") {
    scene = load_scene(arg);
  } else {
    throw std::invalid_argument("run.input '" + config.input + "' does not name a scene");
  }
  if (config.frames >= 0) scene.frames = config.frames;
  if (config.camera_set) scene.camera = config.camera;
  NoiseSpec& n = scene.noise;
  for (const auto& [name, v] : config.noise_overrides) {
    if (name == "depth_slope") n.depth_slope = v;
    if (name == "depth_offset") n.depth_offset = v;
    if (name == "mislabel_probability") n.mislabel_probability = v;
    if (name == "missed_probability") n.missed_probability = v;
    if (name == "speckle_probability") n.speckle_probability = v;
    if (name == "transform_translation_sigma") n.transform_translation_sigma = v;
    if (name == "transform_rotation_sigma") n.transform_rotation_sigma = v;
  }
  scene.validate();
  return scene;
}

}  // namespace pimap
