#pragma once

// Synthetic rigid scenes: ray-cast depth and instance images, per-instance
// motion, injected noise, and accumulated ground-truth voxel maps.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pimap/geometry.hpp"
#include "pimap/measurement.hpp"
#include "pimap/types.hpp"

namespace pimap {

enum class ShapeKind { kBox, kSphere, kCylinder, kMesh };

/// Shapes are centered at their local origin; cylinders run along local z.
struct Shape {
  ShapeKind kind = ShapeKind::kBox;
  Vec3 size = Vec3::Ones();  // box edge lengths
  double radius = 0.5;       // sphere, cylinder
  double height = 1.0;       // cylinder
  std::vector<Vec3> vertices;
  std::vector<Eigen::Vector3i> faces;

  static Shape box(const Vec3& size);
  static Shape sphere(double radius);
  static Shape cylinder(double radius, double height);
  static Shape mesh(std::vector<Vec3> vertices, std::vector<Eigen::Vector3i> faces);

  /// Smallest t > 0 with origin + t * dir on the surface (local frame).
  std::optional<double> intersect(const Vec3& origin, const Vec3& dir) const;
  /// Local axis-aligned bounds.
  std::pair<Vec3, Vec3> bounds() const;
};

struct Keyframe {
  Step step = 0;
  Transform pose;
};

/// Piecewise pose path: linear in translation, spherical-linear in rotation,
/// held constant before the first and after the last keyframe.
struct Trajectory {
  std::vector<Keyframe> keys;

  Transform at(Step k) const;
  static Trajectory fixed(const Transform& pose);
};

struct SceneObject {
  InstanceId id{1};
  SemanticLabel label = SemanticLabel::kMisc;
  Shape shape;
  Trajectory trajectory;
  bool movable = true;
  bool background = false;
  /// Non-rigid objects report centroid translation only.
  bool rigid = true;
};

struct IdSwitch {
  Step step = 0;
  InstanceId from{0};
  InstanceId to{0};
};

struct NoiseSpec {
  /// Depth noise standard deviation a * d + b.
  double depth_slope = 0.0;
  double depth_offset = 0.0;
  /// Per instance and frame: the whole instance is reported under a spurious ID.
  double mislabel_probability = 0.0;
  /// Per instance and frame: the instance's pixels become unlabeled.
  double missed_probability = 0.0;
  /// Per pixel: the label is dropped.
  double speckle_probability = 0.0;
  double transform_translation_sigma = 0.0;
  double transform_rotation_sigma = 0.0;  // radians
  std::vector<IdSwitch> id_switches;

  void validate() const;
};

struct Scene {
  std::string name = "scene";
  Camera camera;
  int frames = 10;
  /// Camera-to-map pose per step.
  Trajectory camera_path;
  std::vector<SceneObject> objects;
  NoiseSpec noise;

  const SceneObject* find(InstanceId id) const;
  void validate() const;
};

/// Camera-to-map pose whose optical axis points from `eye` to `target`.
Keyframe camera_key(Step step, const Vec3& eye, const Vec3& target);

/// Instance ID the tracker reports for `truth` at step k under the switch schedule.
InstanceId scheduled_id(const NoiseSpec& noise, InstanceId truth, Step k);

struct RenderedFrame {
  MeasurementFrame frame;
  /// Noiseless depth and true object IDs (0 where nothing is hit).
  DepthImage true_depth;
  InstanceImage true_instances;
};

RenderedFrame render_frame(const Scene& scene, Step k, Rng& rng);

struct GroundTruthVoxel {
  VoxelIndex index = VoxelIndex::Zero();
  InstanceId instance{0};
  SemanticLabel label = SemanticLabel::kUnlabeled;
  bool movable = false;
  bool background = false;
};

struct GroundTruthMap {
  Step step = 0;
  double voxel_size = 0.2;
  /// Sorted by index.
  std::vector<GroundTruthVoxel> voxels;

  const GroundTruthVoxel* find(const VoxelIndex& index) const;
};

/// Accumulates noiseless surface points in each object's own frame so that
/// points of moving objects follow them.
class GroundTruthBuilder {
 public:
  GroundTruthBuilder(const Scene& scene, double voxel_size, int log2_dim);

  /// Adds the surface seen at step k (noiseless render).
  void observe(Step k);
  /// Adds externally rendered truth for step k.
  void observe(Step k, const DepthImage& true_depth, const InstanceImage& true_instances);
  /// Voxelized, majority-labeled map at step k within the grid window
  /// centered on the camera.
  GroundTruthMap map_at(Step k) const;
  std::size_t point_count() const;

 private:
  struct Key {
    std::int64_t x, y, z;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      return static_cast<std::size_t>(k.x * 73856093LL ^ k.y * 19349663LL ^ k.z * 83492791LL);
    }
  };
  const Scene& scene_;
  double voxel_size_;
  int dim_;
  std::map<InstanceId, std::unordered_map<Key, Vec3, KeyHash>> local_points_;
};

std::vector<GroundTruthMap> build_ground_truth(const Scene& scene, const std::vector<Step>& steps, double voxel_size,
                                               int log2_dim);

// Scene files are JSON; see README for the schema.
Scene load_scene(const std::filesystem::path& path);
Scene parse_scene(const std::string& json_text);
std::string scene_to_json(const Scene& scene);

/// Recorded sequence directory:
///   sequence.txt              camera intrinsics and frame count
///   labels.csv                id,label,background for every reported ID
///   frames/NNNNNN.depth       "DPTH" u32 version u32 width u32 height, float32 LE row-major
///   frames/NNNNNN.inst        "INST" u32 version u32 width u32 height, uint32 LE row-major
///   frames/NNNNNN.pose        camera-to-map 3x4 matrix, row-major text
///   frames/NNNNNN.tf          one line per tracked ID: id, 3x4 matrix
///   gt/objects.csv            id,label,movable,background of the true objects
///   gt/NNNNNN.gt              ground-truth voxels: ix iy iz instance label movable background
///   gt/NNNNNN.ginst           true instance image, same layout as .inst
struct SequenceInfo {
  Camera camera;
  int frames = 0;
  double voxel_size = 0.2;
  int log2_dim = 7;
  std::map<InstanceId, InstanceInfo> labels;
  std::map<InstanceId, std::pair<SemanticLabel, bool>> gt_objects;  // label, movable
};

class SequenceWriter {
 public:
  SequenceWriter(std::filesystem::path dir, const Scene& scene, double voxel_size, int log2_dim);
  void write(const RenderedFrame& frame, const GroundTruthMap* gt);
  /// Writes sequence.txt and labels.csv; call after the last frame.
  void finish();

 private:
  std::filesystem::path dir_;
  const Scene& scene_;
  double voxel_size_;
  int log2_dim_;
  int frames_ = 0;
  std::map<InstanceId, InstanceInfo> labels_;
};

SequenceInfo read_sequence_info(const std::filesystem::path& dir);
/// Reads frame k of a sequence. Throws std::runtime_error naming the file and
/// field on malformed input.
MeasurementFrame read_frame(const std::filesystem::path& dir, const SequenceInfo& info, Step k);
std::optional<GroundTruthMap> read_ground_truth(const std::filesystem::path& dir, Step k, double voxel_size);
std::optional<InstanceImage> read_true_instances(const std::filesystem::path& dir, Step k);

void write_depth_image(const std::filesystem::path& path, const DepthImage& img);
DepthImage read_depth_image(const std::filesystem::path& path);
void write_instance_image(const std::filesystem::path& path, const InstanceImage& img);
InstanceImage read_instance_image(const std::filesystem::path& path);

/// Simulates `scene` and writes the full replay directory including ground truth.
void simulate_to_directory(const Scene& scene, const std::filesystem::path& dir, std::uint64_t seed, double voxel_size,
                           int log2_dim);

namespace demo {

/// Ground plane, a static chair and a box driving across the view.
Scene two_objects();
/// Five static objects of different classes on a ground plane.
Scene static_objects(int frames = 100);
/// A 1 m box moving one voxel per frame along +y in front of a wall.
Scene moving_box(int frames = 30, double voxel_size = 0.2);

}  // namespace demo

}  // namespace pimap
