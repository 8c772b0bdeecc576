#include "pimap/visibility.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

namespace pimap {

UpdateIndicesImage::UpdateIndicesImage(int width, int height, Step step)
    : width_(width),
      height_(height),
      step_(step),
      offsets_(static_cast<std::size_t>(width) * height + 1, 0),
      depth_(static_cast<std::size_t>(width) * height, 0.0f) {}

void UpdateIndicesImage::write_counts(std::ostream& out) const {
  for (int v = 0; v < height_; ++v) {
    for (int u = 0; u < width_; ++u) {
      if (u) out << ' ';
      out << at(u, v).size();
    }
    out << '\n';
  }
}

namespace {

struct Pending {
  std::uint32_t pixel;
  VisibleParticle entry;
};

bool voxel_in_view(const VoxelIndex& v, double res, const Camera& cam, const Transform& map_to_cam,
                   double max_depth) {
  double u_lo = std::numeric_limits<double>::infinity(), u_hi = -u_lo;
  double v_lo = u_lo, v_hi = -u_lo;
  double z_min = u_lo;
  bool behind = false;
  for (int c = 0; c < 8; ++c) {
    const Vec3 corner((v.x() + (c & 1)) * res, (v.y() + ((c >> 1) & 1)) * res, (v.z() + ((c >> 2) & 1)) * res);
    const Vec3 p = map_to_cam * corner;
    z_min = std::min(z_min, p.z());
    if (p.z() <= 0) {
      behind = true;
      continue;
    }
    const double u = cam.focal * p.x() / p.z() + cam.cx;
    const double w = cam.focal * p.y() / p.z() + cam.cy;
    u_lo = std::min(u_lo, u);
    u_hi = std::max(u_hi, u);
    v_lo = std::min(v_lo, w);
    v_hi = std::max(v_hi, w);
  }
  if (z_min >= max_depth) return false;
  if (!behind) return u_hi >= 0 && u_lo < cam.width && v_hi >= 0 && v_lo < cam.height;
  if (u_hi < u_lo) return false;  // every corner behind the camera
  // Straddles the camera plane: bounding sphere against the four side planes.
  const Vec3 c = map_to_cam * ((v.cast<double>() + Vec3::Constant(0.5)) * res);
  const double r = 0.5 * std::sqrt(3.0) * res;
  auto outside = [&](double a, double b, double value) { return value < -r * std::hypot(a, b); };
  if (outside(cam.focal, cam.cx, cam.focal * c.x() + cam.cx * c.z())) return false;
  if (outside(cam.focal, cam.width - cam.cx, (cam.width - cam.cx) * c.z() - cam.focal * c.x())) return false;
  if (outside(cam.focal, cam.cy, cam.focal * c.y() + cam.cy * c.z())) return false;
  if (outside(cam.focal, cam.height - cam.cy, (cam.height - cam.cy) * c.z() - cam.focal * c.y())) return false;
  return true;
}

}  // namespace

UpdateIndicesImage build_indices_image(const VoxelGrid& grid, const Camera& cam, const Pose& pose,
                                       const DepthImage& depth, Step step) {
  UpdateIndicesImage img(cam.width, cam.height, step);
  const auto max_range = static_cast<float>(cam.max_range);
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const bool inside = v < depth.rows() && u < depth.cols();
      const float d = inside ? depth(v, u) : 0.0f;
      img.depth_[static_cast<std::size_t>(v) * cam.width + u] = valid_depth(d) ? d : max_range;
    }
  }

  const double res = grid.voxel_size();
  const double slack = occlusion_slack(res);
  const Transform map_to_cam = pose.camera_to_map.inverse();
  const double max_depth = cam.max_range + slack;

  const VoxelIndex start = voxel_of(pose.position(), res);
  std::vector<Pending> pending;
  if (grid.contains(start)) {
    const auto n = static_cast<std::size_t>(grid.dim()) * grid.dim() * grid.dim();
    std::vector<std::uint8_t> seen(n, 0);
    std::vector<VoxelIndex> frontier{start};
    seen[*grid.cell_of(start)] = 1;
    std::size_t head = 0;
    while (head < frontier.size()) {
      const VoxelIndex vox = frontier[head++];
      const CellIndex cell = *grid.cell_of(vox);
      const auto slots = grid.slots(cell);
      for (int s = 0; s < static_cast<int>(slots.size()); ++s) {
        const Particle& p = slots[s];
        if (!p.valid) continue;
        const Vec3 pc = map_to_cam * p.position;
        const auto uv = project(cam, pc);
        if (!uv) continue;
        const Pixel px = pixel_of(*uv);
        const std::uint32_t pixel = static_cast<std::uint32_t>(px.v) * cam.width + px.u;
        if (!(pc.z() < img.depth_[pixel] + slack)) continue;
        const ParticleRef ref = grid.ref(cell, s);
        pending.push_back({pixel, {ref, static_cast<float>(pc.z())}});
      }
      for (int dz = -1; dz <= 1; ++dz) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (!dx && !dy && !dz) continue;
            const VoxelIndex nb = vox + VoxelIndex(dx, dy, dz);
            const auto nc = grid.cell_of(nb);
            if (!nc || seen[*nc]) continue;
            seen[*nc] = 1;
            if (voxel_in_view(nb, res, cam, map_to_cam, max_depth)) frontier.push_back(nb);
          }
        }
      }
    }
    img.voxels_visited_ = frontier.size();
  }

  // Counting sort by pixel; ties keep discovery order.
  for (const Pending& e : pending) ++img.offsets_[e.pixel + 1];
  for (std::size_t i = 1; i < img.offsets_.size(); ++i) img.offsets_[i] += img.offsets_[i - 1];
  img.entries_.resize(pending.size());
  std::vector<std::uint32_t> cursor(img.offsets_.begin(), img.offsets_.end() - 1);
  for (const Pending& e : pending) img.entries_[cursor[e.pixel]++] = e.entry;
  return img;
}

double activation_radius(double rho, double epsilon) {
  const double arg = 1.0 / (std::pow(2.0 * std::numbers::pi, 1.5) * rho * rho * rho * epsilon);
  if (!(arg > 1.0)) return 0.0;
  return std::sqrt(2.0 * rho * rho * std::log(arg));
}

std::pair<double, double> sphere_projection_extent(double focal, double x, double z, double l) {
  const double root = std::sqrt(std::max(0.0, x * x + z * z - l * l));
  auto ratio = [&](double alpha) { return (x + l * std::sin(alpha)) / (z + l * std::cos(alpha)); };
  const double a1 = 2.0 * std::atan((x + root) / (z - l));
  const double a2 = 2.0 * std::atan((x - root) / (z - l));
  const double r1 = focal * ratio(a1);
  const double r2 = focal * ratio(a2);
  return {std::min(r1, r2), std::max(r1, r2)};
}

ActivationBox activation_box(const Camera& cam, const Vec3& p_cam, double l, int dilation) {
  ActivationBox box;
  box.radius = l;
  const double x = p_cam.x(), y = p_cam.y(), z = p_cam.z();
  const bool ok = z > l && x * x + z * z - l * l >= 0 && y * y + z * z - l * l >= 0;
  if (!ok) {
    box.full_image = true;
    box.u_lo = 0;
    box.v_lo = 0;
    box.u_hi = cam.width;
    box.v_hi = cam.height;
    box.u_min = 0;
    box.v_min = 0;
    box.u_max = cam.width - 1;
    box.v_max = cam.height - 1;
    return box;
  }
  const auto [ux0, ux1] = sphere_projection_extent(cam.focal, x, z, l);
  const auto [vy0, vy1] = sphere_projection_extent(cam.focal, y, z, l);
  box.u_lo = ux0 + cam.cx;
  box.u_hi = ux1 + cam.cx;
  box.v_lo = vy0 + cam.cy;
  box.v_hi = vy1 + cam.cy;

  auto to_pixel = [](double c, int lo, int hi) {
    return static_cast<int>(std::clamp(std::floor(c), static_cast<double>(lo), static_cast<double>(hi)));
  };
  const int u0 = to_pixel(box.u_lo, -1, cam.width);
  const int u1 = to_pixel(box.u_hi, -1, cam.width);
  const int v0 = to_pixel(box.v_lo, -1, cam.height);
  const int v1 = to_pixel(box.v_hi, -1, cam.height);
  box.u_min = std::max(0, u0 - dilation);
  box.u_max = std::min(cam.width - 1, u1 + dilation);
  box.v_min = std::max(0, v0 - dilation);
  box.v_max = std::min(cam.height - 1, v1 + dilation);
  return box;
}

}  // namespace pimap
