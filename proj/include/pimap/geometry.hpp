#pragma once

// Rigid transforms, the pinhole camera and voxel ray traversal.
//
// Camera frame convention: z forward, x right, y down. Pixel (i, j) covers the
// half-open square [i, i+1) x [j, j+1) in continuous image coordinates, so the
// ray through its center is at (i + 0.5, j + 0.5).

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "pimap/types.hpp"

namespace pimap {

template <typename Scalar>
struct RigidTransform {
  using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
  using Vector3 = Eigen::Matrix<Scalar, 3, 1>;

  Matrix3 rotation = Matrix3::Identity();
  Vector3 translation = Vector3::Zero();

  static RigidTransform identity() { return {}; }

  static RigidTransform from_translation(const Vector3& t) {
    RigidTransform out;
    out.translation = t;
    return out;
  }

  static RigidTransform from_axis_angle(const Vector3& axis, Scalar angle,
                                        const Vector3& t = Vector3::Zero()) {
    RigidTransform out;
    out.rotation = Eigen::AngleAxis<Scalar>(angle, axis.normalized()).toRotationMatrix();
    out.translation = t;
    return out;
  }

  RigidTransform inverse() const {
    RigidTransform out;
    out.rotation = rotation.transpose();
    out.translation = -(out.rotation * translation);
    return out;
  }

  /// (this * other)(p) == this(other(p))
  RigidTransform operator*(const RigidTransform& other) const {
    RigidTransform out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }

  Vector3 operator*(const Vector3& p) const { return rotation * p + translation; }

  Eigen::Matrix<Scalar, 4, 4> matrix() const {
    Eigen::Matrix<Scalar, 4, 4> m = Eigen::Matrix<Scalar, 4, 4>::Identity();
    m.template topLeftCorner<3, 3>() = rotation;
    m.template topRightCorner<3, 1>() = translation;
    return m;
  }

  /// Orthonormal with determinant +1 within tol.
  bool is_valid(Scalar tol = Scalar(1e-9)) const {
    const Scalar ortho = (rotation * rotation.transpose() - Matrix3::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(rotation.determinant() - Scalar(1)) <= tol &&
           translation.allFinite();
  }

  template <typename Other>
  RigidTransform<Other> cast() const {
    RigidTransform<Other> out;
    out.rotation = rotation.template cast<Other>();
    out.translation = translation.template cast<Other>();
    return out;
  }
};

using Transform = RigidTransform<double>;

template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, 3, 1> transform_point(const RigidTransform<Scalar>& T,
                                            const Eigen::MatrixBase<Derived>& p) {
  return T.rotation * p + T.translation;
}

/// Camera placed at `eye`, optical axis towards `target`; `up` is the map-frame
/// up direction (image y points against it).
Transform look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());

template <typename Scalar>
struct CameraModel {
  Scalar focal = Scalar(100);
  Scalar cx = Scalar(80);
  Scalar cy = Scalar(60);
  int width = 160;
  int height = 120;
  Scalar max_range = Scalar(10);

  void validate() const {
    if (!(focal > 0)) throw std::invalid_argument("camera focal length must be positive");
    if (width <= 0 || height <= 0) throw std::invalid_argument("camera image must be non-empty");
    if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
      throw std::invalid_argument("camera principal point must lie inside the image");
    if (!(max_range > 0)) throw std::invalid_argument("camera max range must be positive");
  }

  bool contains(Scalar u, Scalar v) const {
    return u >= 0 && u < Scalar(width) && v >= 0 && v < Scalar(height);
  }
};

using Camera = CameraModel<double>;

struct Pixel {
  int u = 0;
  int v = 0;
  bool operator==(const Pixel&) const = default;
};

/// Continuous (u, v) of a camera-frame point; nullopt when behind the camera
/// or off the image.
template <typename Scalar, typename Derived>
std::optional<Eigen::Matrix<Scalar, 2, 1>> project(const CameraModel<Scalar>& cam,
                                                   const Eigen::MatrixBase<Derived>& p_cam) {
  const Scalar z = p_cam(2);
  if (!(z > 0)) return std::nullopt;
  const Scalar u = cam.focal * p_cam(0) / z + cam.cx;
  const Scalar v = cam.focal * p_cam(1) / z + cam.cy;
  if (!cam.contains(u, v)) return std::nullopt;
  return Eigen::Matrix<Scalar, 2, 1>(u, v);
}

template <typename Scalar>
Pixel pixel_of(const Eigen::Matrix<Scalar, 2, 1>& uv) {
  return {static_cast<int>(std::floor(uv.x())), static_cast<int>(std::floor(uv.y()))};
}

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> unproject(const CameraModel<Scalar>& cam,
                                      const Eigen::Matrix<Scalar, 2, 1>& uv, Scalar depth) {
  return {(uv.x() - cam.cx) * depth / cam.focal, (uv.y() - cam.cy) * depth / cam.focal, depth};
}

/// Camera-frame point seen at the center of pixel `px` with z-depth `depth`.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> unproject_pixel(const CameraModel<Scalar>& cam, Pixel px, Scalar depth) {
  return unproject(cam, Eigen::Matrix<Scalar, 2, 1>(px.u + Scalar(0.5), px.v + Scalar(0.5)), depth);
}

struct Pose {
  Transform camera_to_map;
  Step step = 0;

  Vec3 position() const { return camera_to_map.translation; }
};

inline VoxelIndex voxel_of(const Vec3& p, double resolution) {
  return {static_cast<int>(std::floor(p.x() / resolution)),
          static_cast<int>(std::floor(p.y() / resolution)),
          static_cast<int>(std::floor(p.z() / resolution))};
}

inline Vec3 voxel_center(const VoxelIndex& v, double resolution) {
  return (v.cast<double>() + Vec3::Constant(0.5)) * resolution;
}

/// Amanatides-Woo traversal of the voxels pierced by a ray. Each call to next()
/// costs O(1). Exact corner crossings advance every tied axis at once so the
/// traversal never visits a voxel the ray only touches at a point.
class VoxelRay {
 public:
  VoxelRay(const Vec3& origin, const Vec3& direction, double resolution);

  const VoxelIndex& voxel() const { return voxel_; }
  /// Ray parameter at which the current voxel is entered (0 for the first).
  double entry_t() const { return entry_t_; }
  /// Ray parameter at which the current voxel is left.
  double exit_t() const { return t_max_.minCoeff(); }
  void next();

 private:
  VoxelIndex voxel_;
  Eigen::Vector3i step_;
  Vec3 t_max_;
  Vec3 t_delta_;
  double entry_t_ = 0.0;
};

/// Ordered voxels along the ray. `keep_going(voxel, index)` is asked before each
/// voxel is appended; the first false ends the traversal.
std::vector<VoxelIndex> cast_ray(const Vec3& origin, const Vec3& direction, double resolution,
                                 const std::function<bool(const VoxelIndex&, std::size_t)>& keep_going);

/// Voxels pierced by the segment [origin, origin + length * direction].
std::vector<VoxelIndex> cast_ray(const Vec3& origin, const Vec3& direction, double resolution,
                                 double length);

}  // namespace pimap
