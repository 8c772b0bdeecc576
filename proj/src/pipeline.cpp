#include "pimap/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pimap/resample.hpp"

namespace pimap {

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::kRecenter:
      return "recenter";
    case Stage::kPredict:
      return "predict";
    case Stage::kVisibility:
      return "visibility";
    case Stage::kUpdate:
      return "update";
    case Stage::kMemory:
      return "memory";
    case Stage::kBirth:
      return "birth";
    case Stage::kEstimate:
      return "estimate";
    case Stage::kEvaluate:
      return "evaluate";
    case Stage::kTotal:
      return "total";
  }
  return "?";
}

namespace {

class StageTimer {
 public:
  explicit StageTimer(double& sink) : sink_(sink), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    sink_ += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  double& sink_;
  std::chrono::steady_clock::time_point start_;
};

std::string frame_file(Step k, const char* ext) {
  std::ostringstream s;
  s << std::setw(6) << std::setfill('0') << k << ext;
  return s.str();
}

}  // namespace

Mapper::Mapper(MapperOptions options, std::uint64_t seed, TemplateLibrary library)
    : options_(std::move(options)), rng_(seed), grid_(options_.grid), library_(std::move(library)) {
  options_.filter.validate();
  options_.memory.validate();
  options_.camera.validate();
}

LabeledVoxelMap Mapper::process(const MeasurementFrame& frame, FrameReport* out) {
  FrameReport local;
  FrameReport& report = out ? *out : local;
  report = FrameReport{};
  const Step k = frame.step;
  report.step = k;
  const FilterParams& fp = options_.filter;
  LabeledVoxelMap map;
  {
    StageTimer total(report.times[Stage::kTotal]);
    {
      StageTimer t(report.times[Stage::kRecenter]);
      grid_.recenter(frame.pose.position());
      for (const auto& [id, info] : frame.info) registry_.ensure(id, info.label, info.background, !info.background, k);
    }
    {
      StageTimer t(report.times[Stage::kPredict]);
      report.predict = predict(grid_, registry_, frame, fp, k, rng_);
    }
    UpdateIndicesImage indices;
    {
      StageTimer t(report.times[Stage::kVisibility]);
      indices = build_indices_image(grid_, options_.camera, frame.pose, frame.depth, k);
    }
    {
      StageTimer t(report.times[Stage::kUpdate]);
      report.update = update(grid_, indices, frame, options_.camera, fp, k);
    }
    std::vector<TemplateBirth> templates;
    if (options_.memory.enabled && !library_.empty()) {
      StageTimer t(report.times[Stage::kMemory]);
      templates = match_templates(frame, report);
    }
    {
      StageTimer t(report.times[Stage::kBirth]);
      report.birth = birth(grid_, frame, templates, fp, k, rng_);
      if (options_.force_resample) {
        grid_.for_each_cell_mut([&](CellIndex, std::span<Particle> slots) { resample_cell(slots, rng_, k); });
      }
      registry_.rebuild_indices(grid_);
      grid_.release_empty_cells();
      registry_.collect_garbage(options_.gc_frames);
    }
    if (options_.memory.enabled) {
      StageTimer t(report.times[Stage::kMemory]);
      store_templates(k, report);
    }
    {
      StageTimer t(report.times[Stage::kEstimate]);
      map = estimate_map(grid_, registry_, fp, k);
    }
  }
  report.particles = grid_.particle_count();
  report.cells = grid_.allocated_cells();
  return map;
}

std::vector<TemplateBirth> Mapper::match_templates(const MeasurementFrame& frame, FrameReport& report) {
  std::map<InstanceId, std::vector<Vec3>> points;
  for (const MeasurementPoint& m : frame.points) points[m.instance].push_back(m.position);
  const double ml = options_.memory.match_voxel_size > 0 ? options_.memory.match_voxel_size : grid_.voxel_size();
  std::vector<TemplateBirth> births;
  for (auto& [id, pts] : points) {
    if (memory_done_.count(id) || pts.size() < options_.memory.trigger_points) continue;
    const InstanceRecord* record = registry_.find(id);
    if (!record || record->background) continue;
    if (library_.templates(record->label).empty()) continue;
    const MatchEvidence evidence = make_evidence(pts, frame.pose.position(), ml);
    const auto result = match(evidence, library_, record->label, options_.memory, rng_);
    if (!result) continue;
    const Template& tmpl = library_.templates(result->label)[result->template_index];
    TemplateBirth tb;
    tb.instance = id;
    tb.positions.reserve(tmpl.points.size());
    for (const Vec3& p : tmpl.points) tb.positions.push_back(result->transform * p);
    births.push_back(std::move(tb));
    memory_done_.insert(id);
    report.matched.push_back(id);
  }
  return births;
}

void Mapper::store_templates(Step k, FrameReport& report) {
  std::vector<InstanceId> candidates;
  for (const auto& [id, record] : registry_) {
    if (record.background || record.label == SemanticLabel::kUnlabeled || record.particles.empty()) continue;
    if (!memory_done_.count(id)) candidates.push_back(id);
  }
  for (InstanceId id : candidates) {
    const StoreOutcome outcome =
        maybe_store_template(grid_, registry_, id, options_.filter, options_.memory, library_, k);
    if (outcome == StoreOutcome::kStored) report.stored.push_back(id);
    if (outcome == StoreOutcome::kStored || outcome == StoreOutcome::kPruned) memory_done_.insert(id);
  }
}

MapperOptions mapper_options(const RunConfig& config, const Camera& camera) {
  MapperOptions o;
  o.grid = config.grid;
  o.filter = config.filter;
  o.memory = config.memory;
  o.camera = camera;
  o.gc_frames = config.gc_frames;
  o.force_resample = config.force_resample;
  return o;
}

void write_timing_header(std::ostream& out) {
  out << "step";
  for (int s = 0; s < kStageCount; ++s) out << ',' << to_string(static_cast<Stage>(s)) << "_ms";
  out << ",particles,cells\n";
}

void write_timing_row(std::ostream& out, const FrameReport& report) {
  out << report.step;
  for (double ms : report.times.ms) out << ',' << std::fixed << std::setprecision(3) << ms;
  out << ',' << report.particles << ',' << report.cells << '\n';
}

namespace {

// Frames plus their ground truth, either simulated on the fly or replayed.
class FrameSource {
 public:
  FrameSource(const RunConfig& config) : config_(config) {
    const std::string& in = config.input;
    if (in.rfind("replay:", 0) == 0) {
      dir_ = in.substr(7);
      info_ = read_sequence_info(dir_);
      camera_ = info_.camera;
      frames_ = config.frames >= 0 ? std::min(config.frames, info_.frames) : info_.frames;
      for (const auto& [id, obj] : info_.gt_objects) labels_[id] = obj.first;
      for (const auto& [id, info] : info_.labels) background_[id] = info.background;
    } else {
      scene_ = resolve_scene(config);
      camera_ = scene_.camera;
      frames_ = scene_.frames;
      sim_rng_.seed(config.seed);
      gt_.emplace(scene_, config.grid.voxel_size, config.grid.log2_dim);
      for (const SceneObject& o : scene_.objects) {
        labels_[o.id] = o.label;
        background_[o.id] = o.background;
      }
    }
  }

  const Camera& camera() const { return camera_; }
  int frames() const { return frames_; }

  MeasurementFrame next(Step k) {
    truth_.reset();
    true_ids_.reset();
    if (!dir_.empty()) {
      MeasurementFrame f = read_frame(dir_, info_, k);
      if (std::abs(info_.voxel_size - config_.grid.voxel_size) < 1e-12) {
        truth_ = read_ground_truth(dir_, k, info_.voxel_size);
        true_ids_ = read_true_instances(dir_, k);
      }
      return f;
    }
    RenderedFrame r = render_frame(scene_, k, sim_rng_);
    gt_->observe(k, r.true_depth, r.true_instances);
    truth_ = gt_->map_at(k);
    true_ids_ = std::move(r.true_instances);
    return std::move(r.frame);
  }

  const std::optional<GroundTruthMap>& truth() const { return truth_; }

  std::optional<TruthView> view(const Pose& pose) const {
    if (!true_ids_) return std::nullopt;
    return TruthView{camera_, pose, *true_ids_, labels_, background_};
  }

 private:
  const RunConfig& config_;
  std::filesystem::path dir_;
  SequenceInfo info_;
  Scene scene_;
  Rng sim_rng_;
  std::optional<GroundTruthBuilder> gt_;
  Camera camera_;
  int frames_ = 0;
  std::optional<GroundTruthMap> truth_;
  std::optional<InstanceImage> true_ids_;
  std::map<InstanceId, SemanticLabel> labels_;
  std::map<InstanceId, bool> background_;
};

}  // namespace

RunSummary run_sequence(const RunConfig& config, std::ostream& log) {
  config.validate();
  FrameSource source(config);
  Mapper mapper(mapper_options(config, source.camera()), config.seed ^ 0x9E3779B97F4A7C15ULL);

  std::filesystem::create_directories(config.output);
  {
    std::ofstream cfg(config.output / "config.txt");
    cfg << effective_config_text(config);
  }
  if (config.export_maps) std::filesystem::create_directories(config.output / "maps");
  std::ofstream metrics(config.output / "metrics.csv");
  std::ofstream timing(config.output / "timing.csv");
  write_metrics_header(metrics);
  write_timing_header(timing);

  EvalOptions eval;
  eval.worst_case_distance = std::sqrt(3.0) * config.grid.extent();
  eval.splat = config.splat;
  MetricsAggregator aggregate;
  RunSummary summary;
  double total_ms = 0.0;

  for (Step k = 0; k < source.frames(); ++k) {
    const MeasurementFrame frame = source.next(k);
    FrameReport report;
    const LabeledVoxelMap map = mapper.process(frame, &report);
    if (config.export_maps) {
      std::ofstream text(config.output / "maps" / frame_file(k, ".txt"));
      write_map_text(map, text);
      std::ofstream bin(config.output / "maps" / frame_file(k, ".map"), std::ios::binary);
      write_map_binary(map, bin);
    }
    if (config.evaluate && source.truth()) {
      StageTimer t(report.times[Stage::kEvaluate]);
      try {
        const auto view = source.view(frame.pose);
        const FrameMetrics m = evaluate_frame(map, *source.truth(), eval, view ? &*view : nullptr);
        write_metrics_row(metrics, m);
        aggregate.add(m);
        ++summary.metric_rows;
      } catch (const std::exception& e) {
        log << "frame " << k << ": evaluation failed: " << e.what() << '\n';
      }
    }
    report.times[Stage::kTotal] += report.times[Stage::kEvaluate];
    write_timing_row(timing, report);
    total_ms += report.times[Stage::kTotal];
    ++summary.frames;
  }
  if (aggregate.frames() > 0) {
    aggregate.write_row(metrics);
    summary.mean_f1 = aggregate.means()[6];
  }
  if (!mapper.library().empty()) mapper.library().save(config.output / "templates");
  summary.mean_total_ms = summary.frames ? total_ms / summary.frames : 0.0;
  return summary;
}

std::size_t evaluate_directory(const std::filesystem::path& maps, const std::filesystem::path& sequence,
                               const RunConfig& config, std::ostream& log) {
  const SequenceInfo info = read_sequence_info(sequence);
  std::map<InstanceId, SemanticLabel> labels;
  std::map<InstanceId, bool> background;
  for (const auto& [id, obj] : info.gt_objects) labels[id] = obj.first;
  for (const auto& [id, i] : info.labels) background[id] = i.background;

  std::filesystem::create_directories(config.output);
  std::ofstream metrics(config.output / "metrics.csv");
  write_metrics_header(metrics);
  EvalOptions eval;
  eval.worst_case_distance = std::sqrt(3.0) * (1 << info.log2_dim) * info.voxel_size;
  eval.splat = config.splat;
  MetricsAggregator aggregate;
  const int frames = config.frames >= 0 ? std::min(config.frames, info.frames) : info.frames;
  for (Step k = 0; k < frames; ++k) {
    const auto map_path = maps / frame_file(k, ".map");
    std::ifstream in(map_path, std::ios::binary);
    if (!in) {
      log << "frame " << k << ": no map export " << map_path.string() << '\n';
      continue;
    }
    LabeledVoxelMap map;
    try {
      map = read_map_binary(in);
    } catch (const std::exception& e) {
      throw std::runtime_error(map_path.string() + ": " + e.what());
    }
    const auto truth = read_ground_truth(sequence, k, info.voxel_size);
    if (!truth) {
      log << "frame " << k << ": no ground truth\n";
      continue;
    }
    std::optional<TruthView> view;
    if (auto ids = read_true_instances(sequence, k)) {
      const MeasurementFrame f = read_frame(sequence, info, k);
      view = TruthView{info.camera, f.pose, std::move(*ids), labels, background};
    }
    const FrameMetrics m = evaluate_frame(map, *truth, eval, view ? &*view : nullptr);
    write_metrics_row(metrics, m);
    aggregate.add(m);
  }
  if (aggregate.frames() > 0) aggregate.write_row(metrics);
  return aggregate.frames();
}

}  // namespace pimap
