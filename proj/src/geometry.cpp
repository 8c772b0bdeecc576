#include "pimap/geometry.hpp"

namespace pimap {

Transform look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-12) right = forward.unitOrthogonal();
  right.normalize();
  const Vec3 down = forward.cross(right);
  Transform T;
  T.rotation.col(0) = right;
  T.rotation.col(1) = down;
  T.rotation.col(2) = forward;
  T.translation = eye;
  return T;
}

VoxelRay::VoxelRay(const Vec3& origin, const Vec3& direction, double resolution)
    : voxel_(voxel_of(origin, resolution)) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double d = direction(a);
    if (d > 0) {
      step_(a) = 1;
      t_max_(a) = ((voxel_(a) + 1) * resolution - origin(a)) / d;
      t_delta_(a) = resolution / d;
    } else if (d < 0) {
      step_(a) = -1;
      t_max_(a) = (voxel_(a) * resolution - origin(a)) / d;
      t_delta_(a) = -resolution / d;
    } else {
      step_(a) = 0;
      t_max_(a) = kInf;
      t_delta_(a) = kInf;
    }
  }
}

void VoxelRay::next() {
  const double t = t_max_.minCoeff();
  // Relative tolerance so a crossing through an edge or corner steps all tied
  // axes together.
  const double tol = 1e-12 * std::max(1.0, std::abs(t));
  for (int a = 0; a < 3; ++a) {
    if (t_max_(a) - t <= tol) {
      voxel_(a) += step_(a);
      t_max_(a) += t_delta_(a);
    }
  }
  entry_t_ = t;
}

std::vector<VoxelIndex> cast_ray(const Vec3& origin, const Vec3& direction, double resolution,
                                 const std::function<bool(const VoxelIndex&, std::size_t)>& keep_going) {
  std::vector<VoxelIndex> out;
  VoxelRay ray(origin, direction, resolution);
  while (keep_going(ray.voxel(), out.size())) {
    out.push_back(ray.voxel());
    ray.next();
  }
  return out;
}

std::vector<VoxelIndex> cast_ray(const Vec3& origin, const Vec3& direction, double resolution,
                                 double length) {
  std::vector<VoxelIndex> out;
  if (!(length > 0)) return out;
  VoxelRay ray(origin, direction, resolution);
  while (ray.entry_t() < length) {
    out.push_back(ray.voxel());
    ray.next();
  }
  return out;
}

}  // namespace pimap
