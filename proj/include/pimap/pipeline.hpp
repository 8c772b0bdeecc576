#pragma once

// Per-frame mapping driver and sequence runner.

#include <array>
#include <filesystem>
#include <ostream>
#include <set>
#include <string>

#include "pimap/config.hpp"
#include "pimap/evaluation.hpp"
#include "pimap/filter.hpp"
#include "pimap/memory.hpp"
#include "pimap/visibility.hpp"

namespace pimap {

enum class Stage { kRecenter, kPredict, kVisibility, kUpdate, kMemory, kBirth, kEstimate, kEvaluate, kTotal };
inline constexpr int kStageCount = 9;

std::string_view to_string(Stage stage);

/// Wall-clock milliseconds per stage for one frame.
struct StageTimes {
  std::array<double, kStageCount> ms{};

  double& operator[](Stage s) { return ms[static_cast<int>(s)]; }
  double operator[](Stage s) const { return ms[static_cast<int>(s)]; }
};

struct MapperOptions {
  GridConfig grid;
  FilterParams filter;
  MemoryParams memory;
  Camera camera;
  int gc_frames = 10;
  bool force_resample = false;
};

struct FrameReport {
  Step step = 0;
  PredictReport predict;
  UpdateReport update;
  BirthReport birth;
  std::size_t particles = 0;
  std::size_t cells = 0;
  /// Instances matched against the template library this frame.
  std::vector<InstanceId> matched;
  std::vector<InstanceId> stored;
  StageTimes times;
};

class Mapper {
 public:
  Mapper(MapperOptions options, std::uint64_t seed, TemplateLibrary library = {});

  /// Runs one frame and returns the estimated map.
  LabeledVoxelMap process(const MeasurementFrame& frame, FrameReport* report = nullptr);

  const VoxelGrid& grid() const { return grid_; }
  VoxelGrid& grid() { return grid_; }
  const InstanceRegistry& registry() const { return registry_; }
  const TemplateLibrary& library() const { return library_; }
  const MapperOptions& options() const { return options_; }

 private:
  std::vector<TemplateBirth> match_templates(const MeasurementFrame& frame, FrameReport& report);
  void store_templates(Step k, FrameReport& report);

  MapperOptions options_;
  Rng rng_;
  VoxelGrid grid_;
  InstanceRegistry registry_;
  TemplateLibrary library_;
  /// Instances already stored as templates or born from one.
  std::set<InstanceId> memory_done_;
};

MapperOptions mapper_options(const RunConfig& config, const Camera& camera);

struct RunSummary {
  int frames = 0;
  std::size_t metric_rows = 0;
  double mean_total_ms = 0.0;
  std::optional<double> mean_f1;
};

/// Runs the configured input through the mapper and writes into
/// config.output: config.txt, metrics.csv, timing.csv, maps/NNNNNN.{txt,map}
/// and templates/. Malformed frame files abort with the file and field named;
/// metric failures are logged to `log` and mapping continues.
RunSummary run_sequence(const RunConfig& config, std::ostream& log);

/// Scores the binary map exports in `maps` against the ground truth of a
/// recorded sequence; writes config.output/metrics.csv. Returns scored frames.
std::size_t evaluate_directory(const std::filesystem::path& maps, const std::filesystem::path& sequence,
                               const RunConfig& config, std::ostream& log);

void write_timing_header(std::ostream& out);
void write_timing_row(std::ostream& out, const FrameReport& report);

}  // namespace pimap
