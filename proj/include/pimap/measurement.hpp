#pragma once

#include <map>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "pimap/geometry.hpp"
#include "pimap/types.hpp"

namespace pimap {

/// Row-major so that (row, col) == (v, u) walks memory in image order.
using DepthImage = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using InstanceImage = Eigen::Matrix<std::uint32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Depth values that are not finite and positive are invalid.
inline bool valid_depth(float d) { return std::isfinite(d) && d > 0.0f; }

struct InstanceInfo {
  SemanticLabel label = SemanticLabel::kUnlabeled;
  /// Static, class-pooled structure (ground, walls); never moved.
  bool background = false;
};

struct MeasurementPoint {
  Vec3 position = Vec3::Zero();  // map frame
  Vec3 camera_point = Vec3::Zero();
  Pixel pixel;
  double depth = 0.0;
  InstanceId instance{0};
};

struct MeasurementFrame {
  Step step = 0;
  Pose pose;
  DepthImage depth;
  InstanceImage instances;
  /// Label and kind of every instance ID appearing in the image.
  std::map<InstanceId, InstanceInfo> info;
  /// Motion of each tracked instance from the previous step to this one,
  /// expressed in the map frame.
  std::map<InstanceId, Transform> transforms;
  /// Derived from the images by extract_measurements.
  std::vector<MeasurementPoint> points;
};

/// Unprojects every valid-depth pixel at its center. Points are ordered by
/// row, then column.
void extract_measurements(MeasurementFrame& frame, const Camera& cam);

}  // namespace pimap
