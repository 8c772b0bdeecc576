#pragma once

// Map quality metrics against ground-truth voxel maps: distance metrics,
// occupancy F1, semantic IoU and instance F1, per frame and aggregated.

#include <array>
#include <map>
#include <optional>
#include <ostream>
#include <unordered_map>
#include <vector>

#include "pimap/filter.hpp"
#include "pimap/geometry.hpp"
#include "pimap/simulator.hpp"

namespace pimap {

/// Static 3D nearest-neighbor search (k-d tree).
class NearestNeighbor {
 public:
  explicit NearestNeighbor(std::vector<Vec3> points);

  bool empty() const { return points_.empty(); }
  /// Euclidean distance to the closest point; infinity when empty.
  double distance(const Vec3& q) const;

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1;
    int right = -1;
  };
  int build(std::vector<int>& order, int lo, int hi, int depth);
  void search(int node, const Vec3& q, double& best) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Average Hausdorff distance: the mean of the two directed mean
/// nearest-neighbor distances. Empty when either set is empty.
std::optional<double> ahd(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

struct AdmResult {
  double value = 0.0;
  /// Set when no voxel was estimated occupied and `value` is the worst case.
  bool worst_case = false;
};

/// Mean distance from each movable ground-truth voxel to the closest
/// estimated occupied voxel. Empty when there are no movable voxels.
std::optional<AdmResult> adm(const std::vector<Vec3>& gt_movable, const std::vector<Vec3>& estimated,
                             double worst_case_distance);

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  double precision() const;
  double recall() const;
  double f1() const;
};

Confusion occupancy_confusion(const std::vector<VoxelIndex>& estimated, const std::vector<VoxelIndex>& truth);

/// Per-class intersection and union counts; classes absent from both sides
/// are not listed.
struct ClassIoU {
  std::map<SemanticLabel, std::pair<std::size_t, std::size_t>> counts;  // intersection, union
  std::map<SemanticLabel, std::size_t> gt_count;

  std::optional<double> iou(SemanticLabel label) const;
  /// Mean over classes present in the ground truth.
  std::optional<double> mean() const;
};

/// Voxel-wise IoU per class between the occupied estimated voxels and the
/// ground-truth voxels.
ClassIoU semantic_iou_3d(const LabeledVoxelMap& estimated, const GroundTruthMap& truth);

enum class Splat { kNearestPixel, kProjectedSquare };

/// Estimated label and instance images rendered from the occupied voxels.
struct MapImages {
  Eigen::Matrix<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> labels;
  InstanceImage instances;
  DepthImage depth;
  /// Pixels receiving at least one voxel.
  std::size_t covered = 0;
};

/// Voxels are drawn front to back by center depth, either at the pixel of
/// their center or as the square their size subtends there.
MapImages render_map(const LabeledVoxelMap& map, const Camera& cam, const Pose& pose, Splat splat);

/// Image-space view of the ground truth for the 2D metrics.
struct TruthView {
  Camera camera;
  Pose pose;
  InstanceImage instances;
  std::map<InstanceId, SemanticLabel> labels;
  std::map<InstanceId, bool> background;
};

/// 2D IoU per class between the rendered map and the true label image.
ClassIoU semantic_iou_2d(const MapImages& rendered, const TruthView& truth);

/// Mean F1 over ground-truth instances after greedy one-to-one matching by
/// descending IoU; pairs need IoU > 0.5. Keys are voxel or pixel ids.
double instance_mf1(const std::map<InstanceId, std::vector<std::int64_t>>& estimated,
                    const std::map<InstanceId, std::vector<std::int64_t>>& truth);

/// Background ground-truth instances are not scored.
double instance_mf1_3d(const LabeledVoxelMap& estimated, const GroundTruthMap& truth);
std::optional<double> instance_mf1_2d(const MapImages& rendered, const TruthView& truth);

/// Speculative voxels against ground truth not yet claimed occupied.
struct SpeculationStats {
  std::size_t speculative = 0;
  std::size_t speculative_true = 0;  // speculative and in the ground truth
  std::size_t missing = 0;           // ground truth not estimated occupied

  std::optional<double> recall() const;  // speculative_true / missing
  std::optional<double> precision() const;
};

SpeculationStats speculation_stats(const LabeledVoxelMap& estimated, const GroundTruthMap& truth);

inline constexpr int kClassColumns = kNumSemanticLabels - 1;

struct FrameMetrics {
  Step step = 0;
  std::size_t estimated_occupied = 0;
  std::size_t speculative = 0;
  std::size_t gt_voxels = 0;
  std::optional<double> ahd;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> adm;
  bool adm_worst_case = false;
  std::optional<double> miou_3d;
  std::optional<double> miou_2d;
  std::optional<double> mf1_3d;
  std::optional<double> mf1_2d;
  std::optional<double> speculation_recall;
  /// Per-class 3D IoU, indexed by label - 1.
  std::array<std::optional<double>, kClassColumns> iou_3d{};
};

struct EvalOptions {
  /// ADm reported when nothing is estimated occupied.
  double worst_case_distance = 0.0;
  Splat splat = Splat::kProjectedSquare;
};

FrameMetrics evaluate_frame(const LabeledVoxelMap& estimated, const GroundTruthMap& truth, const EvalOptions& options,
                            const TruthView* view = nullptr);

/// Metrics tables: a fixed header, one row per frame, and a final "mean" row.
/// Missing values are empty fields.
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const FrameMetrics& m);

/// Streaming per-column mean over frames; missing values are skipped.
class MetricsAggregator {
 public:
  void add(const FrameMetrics& m);
  std::size_t frames() const { return frames_; }
  /// Column means in header order, excluding the step column.
  std::vector<std::optional<double>> means() const;
  void write_row(std::ostream& out) const;

 private:
  std::size_t frames_ = 0;
  std::vector<double> sum_;
  std::vector<std::size_t> count_;
};

std::vector<std::string> metrics_columns();
/// Values in column order, excluding the step column.
std::vector<std::optional<double>> metrics_values(const FrameMetrics& m);

}  // namespace pimap
