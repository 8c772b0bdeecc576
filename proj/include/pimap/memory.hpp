#pragma once

// Template memory: completeness test, template library, similarity score and
// RANSAC matching of a newly observed instance against stored shapes.

#include <filesystem>
#include <map>
#include <optional>
#include <unordered_map>
#include <vector>

#include "pimap/filter.hpp"
#include "pimap/particle_store.hpp"

namespace pimap {

struct MemoryParams {
  bool enabled = true;
  double completeness_threshold = 0.9;
  int completeness_rays = 1000;
  /// A new instance is matched only with more measurement points than this.
  std::size_t trigger_points = 5000;
  double score_threshold = 0.6;
  int ransac_iterations = 200;
  double early_exit_score = 0.9;
  double prune_score = 0.95;
  int icp_iterations = 3;
  /// Voxel size of the similarity score; non-positive means the map voxel size.
  double match_voxel_size = 0.0;

  void validate() const;
};

struct Template {
  SemanticLabel label = SemanticLabel::kUnlabeled;
  /// Object-local positions, origin at the voxel mass center.
  std::vector<Vec3> points;
  std::vector<double> weights;
  InstanceId source{0};
  Step created = 0;
  /// Map-frame mass center when stored.
  Vec3 anchor = Vec3::Zero();
};

class TemplateLibrary {
 public:
  void add(Template t);
  const std::vector<Template>& templates(SemanticLabel label) const;
  std::size_t size() const;
  bool empty() const { return size() == 0; }

  /// One file per template, named template_<label>_<n>.tpl.
  void save(const std::filesystem::path& dir) const;
  static TemplateLibrary load(const std::filesystem::path& dir);

  const std::map<SemanticLabel, std::vector<Template>>& all() const { return by_label_; }

 private:
  std::map<SemanticLabel, std::vector<Template>> by_label_;
};

void write_template(const Template& t, std::ostream& out);
Template read_template(std::istream& in);

/// R directions on a Fibonacci lattice of the unit sphere.
std::vector<Vec3> fibonacci_directions(int count);

/// Fraction of rays from the voxels' mass center that hit an instance voxel
/// before leaving the voxels' bounding box. The voxel holding the center is
/// never counted as a hit.
double completeness(const std::vector<VoxelIndex>& voxels, double voxel_size, int rays);

/// Measured points of one instance plus voxels observed as free space, in map
/// voxels of `voxel_size`. The scoring region is the bounding box of the points.
struct MatchEvidence {
  double voxel_size = 0.2;
  std::vector<Vec3> points;
  VoxelIndex box_min = VoxelIndex::Zero();
  VoxelIndex box_max = VoxelIndex::Constant(-1);
  /// +1 measured, -1 observed free; voxels absent are unknown.
  std::unordered_map<VoxelIndex, int, VoxelIndexHash> h;
  /// Voxels with h != 0; the score normalizer.
  std::size_t informative = 0;
};

/// Evidence from measured points only (no free space).
MatchEvidence make_evidence(const std::vector<Vec3>& points, double voxel_size);

/// Adds free-space evidence by casting a ray from `sensor` to every point and
/// marking the voxels crossed before the point's own voxel.
MatchEvidence make_evidence(const std::vector<Vec3>& points, const Vec3& sensor, double voxel_size);

/// Score in [-1, 1]: sum over the region of min(template mass, 1) * h divided
/// by the number of informative voxels. Throws on evidence without points.
double similarity(const MatchEvidence& evidence, const Template& tmpl, const Transform& T);

struct MatchResult {
  SemanticLabel label = SemanticLabel::kUnlabeled;
  std::size_t template_index = 0;
  /// Template-local to map frame.
  Transform transform;
  double score = -1.0;
};

std::optional<MatchResult> match(const MatchEvidence& evidence, const TemplateLibrary& library, SemanticLabel label,
                                 const MemoryParams& params, Rng& rng);

/// Occupied voxels whose dominant ID is `id`.
std::vector<VoxelIndex> instance_voxels(const VoxelGrid& grid, InstanceId id, double occupancy_threshold);

enum class StoreOutcome { kStored, kNotComplete, kPruned, kUnknownInstance, kNotEligible };

std::string_view to_string(StoreOutcome outcome);

/// Stores the instance as a template when its completeness exceeds the
/// threshold, unless a near-identical template of the same label exists.
StoreOutcome maybe_store_template(const VoxelGrid& grid, const InstanceRegistry& registry, InstanceId id,
                                  const FilterParams& filter, const MemoryParams& params, TemplateLibrary& library,
                                  Step k, double* completeness_out = nullptr);

}  // namespace pimap
