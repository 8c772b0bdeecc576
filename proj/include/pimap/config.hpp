#pragma once

// Run configuration. One "key = value" per line with flat dotted keys, '#'
// starts a comment. Every key can be overridden by an environment variable
// named PIMAP_ plus the key upper-cased with dots replaced by underscores
// (filter.p_detect -> PIMAP_FILTER_P_DETECT). Precedence: command-line flag,
// environment, file, built-in default.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pimap/evaluation.hpp"
#include "pimap/filter_params.hpp"
#include "pimap/memory.hpp"
#include "pimap/particle_store.hpp"
#include "pimap/simulator.hpp"

namespace pimap {

struct RunConfig {
  FilterParams filter;
  GridConfig grid;
  MemoryParams memory;
  /// Frames an instance may stay without particles before it is forgotten.
  int gc_frames = 10;

  /// Camera for simulated input; replayed sequences carry their own.
  Camera camera{120.0, 80.0, 60.0, 160, 120, 10.0};
  bool camera_set = false;
  /// Overrides of the scene's noise for simulated input.
  std::map<std::string, double> noise_overrides;

  std::uint64_t seed = 1;
  /// Negative: every frame of the input.
  int frames = -1;
  /// "demo:<name>", "scene:<file.json>" or "replay:<directory>".
  std::string input = "demo:two_objects";
  std::filesystem::path output = "pimap_out";
  bool export_maps = true;
  /// Resample every cell after birth instead of only when a cell is full.
  bool force_resample = false;
  bool evaluate = true;
  Splat splat = Splat::kProjectedSquare;

  /// Throws std::invalid_argument with the offending key.
  void validate() const;
};

/// Known keys in emission order.
std::vector<std::string> config_keys();

/// Sets one key; throws std::invalid_argument on unknown keys or bad values.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

/// Applies "key = value" lines; `source` names the input in errors.
void apply_config_text(RunConfig& config, const std::string& text, const std::string& source);
void apply_config_file(RunConfig& config, const std::filesystem::path& path);
/// Applies PIMAP_* variables found through `getenv`.
void apply_environment(RunConfig& config, const std::function<const char*(const char*)>& getenv);

std::string env_name(const std::string& key);

/// Every key with its effective value; reading it back reproduces the config.
std::string effective_config_text(const RunConfig& config);

/// Builds the scene for "demo:" and "scene:" inputs with overrides applied.
Scene resolve_scene(const RunConfig& config);

}  // namespace pimap
