#pragma once

// Per-frame update indices image and the activation bounding box of a
// measurement point.

#include <iosfwd>
#include <span>
#include <vector>

#include "pimap/filter_params.hpp"
#include "pimap/geometry.hpp"
#include "pimap/measurement.hpp"
#include "pimap/particle_store.hpp"

namespace pimap {

struct VisibleParticle {
  ParticleRef ref = 0;
  /// Camera-frame z of the particle.
  float depth = 0.0f;
};

/// Pixel -> visible particles, stored row-major as compressed rows so that a
/// horizontal pixel run maps to one contiguous entry range.
class UpdateIndicesImage {
 public:
  UpdateIndicesImage() = default;
  UpdateIndicesImage(int width, int height, Step step);

  int width() const { return width_; }
  int height() const { return height_; }
  Step step() const { return step_; }

  std::span<const VisibleParticle> at(int u, int v) const { return run(v, u, u); }
  /// Entries of pixels u0..u1 (inclusive) in row v.
  std::span<const VisibleParticle> run(int v, int u0, int u1) const {
    const std::size_t row = static_cast<std::size_t>(v) * width_;
    return {entries_.data() + offsets_[row + u0], entries_.data() + offsets_[row + u1 + 1]};
  }
  /// Index of the first entry of pixel (u, v) in entries().
  std::size_t offset(int u, int v) const { return offsets_[static_cast<std::size_t>(v) * width_ + u]; }
  std::span<const VisibleParticle> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  /// Measured depth per pixel; invalid pixels hold the sensor max range.
  float measured_depth(int u, int v) const { return depth_[static_cast<std::size_t>(v) * width_ + u]; }
  std::size_t voxels_visited() const { return voxels_visited_; }

  /// Text matrix of per-pixel particle counts, one image row per line.
  void write_counts(std::ostream& out) const;

 private:
  friend UpdateIndicesImage build_indices_image(const VoxelGrid&, const Camera&, const Pose&, const DepthImage&,
                                                Step);
  int width_ = 0;
  int height_ = 0;
  Step step_ = 0;
  std::vector<std::uint32_t> offsets_;
  std::vector<VisibleParticle> entries_;
  std::vector<float> depth_;
  std::size_t voxels_visited_ = 0;
};

/// Depth slack for the occlusion test: half a voxel diagonal.
inline double occlusion_slack(double voxel_size) { return 0.5 * std::sqrt(3.0) * voxel_size; }

/// Breadth-first search from the sensor voxel over voxels in the view frustum;
/// every particle that projects into the image in front of the measured
/// surface (plus slack) is listed at its pixel.
UpdateIndicesImage build_indices_image(const VoxelGrid& grid, const Camera& cam, const Pose& pose,
                                       const DepthImage& depth, Step step);

/// Radius of the sphere outside which an isotropic Gaussian with standard
/// deviation rho falls below epsilon. Zero when the peak is already below it.
double activation_radius(double rho, double epsilon);

struct ActivationBox {
  /// Continuous image bounds of the projected sphere, before clamping.
  double u_lo = 0.0, u_hi = 0.0, v_lo = 0.0, v_hi = 0.0;
  /// Inclusive pixel bounds after clamping and dilation.
  int u_min = 0, u_max = -1, v_min = 0, v_max = -1;
  double radius = 0.0;
  /// Sphere reaches behind the camera; the box is the whole image.
  bool full_image = false;

  bool empty() const { return u_max < u_min || v_max < v_min; }
  bool contains(int u, int v) const { return u >= u_min && u <= u_max && v >= v_min && v <= v_max; }
};

/// Extremes of f * (x + l sin a) / (z + l cos a) over a, for one image axis.
/// Requires z > l and x^2 + z^2 - l^2 >= 0.
std::pair<double, double> sphere_projection_extent(double focal, double x, double z, double l);

/// Bounding box of the image of the sphere of radius l around p_cam,
/// clamped to the image and dilated by `dilation` pixels.
ActivationBox activation_box(const Camera& cam, const Vec3& p_cam, double l, int dilation);

}  // namespace pimap
