#include <numbers>
#include <set>
#include <sstream>
#include <utility>

#include <gtest/gtest.h>

#include "pimap/filter.hpp"
#include "pimap/visibility.hpp"

namespace pimap {
namespace {

const Camera kCam{40.0, 32.0, 24.0, 64, 48, 6.0};

GridConfig grid_config() {
  GridConfig c;
  c.log2_dim = 5;
  c.voxel_size = 0.2;
  return c;
}

Particle particle_at(const Vec3& p) {
  Particle out;
  out.position = p;
  out.weight = 0.1;
  out.instance = InstanceId{2};
  out.valid = true;
  return out;
}

using Entry = std::pair<std::uint32_t, ParticleRef>;

std::set<Entry> listed(const UpdateIndicesImage& img) {
  std::set<Entry> out;
  for (int v = 0; v < img.height(); ++v)
    for (int u = 0; u < img.width(); ++u)
      for (const VisibleParticle& e : img.at(u, v)) out.insert({static_cast<std::uint32_t>(v * img.width() + u), e.ref});
  return out;
}

// Projects every particle directly and applies the depth test.
std::set<Entry> brute_force(const VoxelGrid& grid, const Pose& pose, const DepthImage& depth) {
  std::set<Entry> out;
  const Transform to_cam = pose.camera_to_map.inverse();
  const double slack = occlusion_slack(grid.voxel_size());
  grid.for_each_particle([&](ParticleRef ref, const Particle& p) {
    const Vec3 pc = to_cam * p.position;
    const auto uv = project(kCam, pc);
    if (!uv) return;
    const Pixel px = pixel_of(*uv);
    const float d = depth(px.v, px.u);
    const double surface = valid_depth(d) ? d : kCam.max_range;
    if (pc.z() < surface + slack) out.insert({static_cast<std::uint32_t>(px.v * kCam.width + px.u), ref});
  });
  return out;
}

TEST(IndicesImage, WallOccludesParticlesBehindIt) {
  VoxelGrid grid(grid_config());
  Rng rng(1);
  const Pose pose{Transform::identity(), 0};
  DepthImage depth = DepthImage::Constant(kCam.height, kCam.width, 2.0f);
  grid.insert(particle_at(Vec3(0.01, 0.01, 1.5)), rng, 0);   // in front of the wall
  grid.insert(particle_at(Vec3(0.01, 0.01, 2.1)), rng, 0);   // inside the slack
  grid.insert(particle_at(Vec3(0.01, 0.01, 2.5)), rng, 0);   // behind
  grid.insert(particle_at(Vec3(0.01, 0.01, -1.0)), rng, 0);  // behind the camera
  const UpdateIndicesImage img = build_indices_image(grid, kCam, pose, depth, 0);
  ASSERT_EQ(img.size(), 2u);
  const auto at = img.at(32, 24);
  ASSERT_EQ(at.size(), 2u);
  std::multiset<float> depths{at[0].depth, at[1].depth};
  EXPECT_EQ(depths, (std::multiset<float>{1.5f, 2.1f}));
  EXPECT_FLOAT_EQ(img.measured_depth(0, 0), 2.0f);
}

TEST(IndicesImage, InvalidDepthMeansMaxRange) {
  VoxelGrid grid(grid_config());
  Rng rng(1);
  DepthImage depth = DepthImage::Zero(kCam.height, kCam.width);
  grid.insert(particle_at(Vec3(0.01, 0.01, 2.9)), rng, 0);
  const UpdateIndicesImage img = build_indices_image(grid, kCam, {Transform::identity(), 0}, depth, 0);
  EXPECT_EQ(img.size(), 1u);
  EXPECT_FLOAT_EQ(img.measured_depth(5, 5), 6.0f);
}

TEST(IndicesImage, MatchesBruteForceProjection) {
  Rng rng(2);
  std::uniform_real_distribution<double> pos(-3.1, 3.1), cam_pos(-1.0, 1.0), yaw(-M_PI, M_PI);
  std::uniform_real_distribution<float> d(0.5f, 4.0f), coin(0.0f, 1.0f);
  for (int scene = 0; scene < 20; ++scene) {
    VoxelGrid grid(grid_config());
    for (int i = 0; i < 3000; ++i) grid.insert(particle_at(Vec3(pos(rng), pos(rng), pos(rng))), rng, 0);
    const Vec3 eye(cam_pos(rng), cam_pos(rng), cam_pos(rng));
    const double a = yaw(rng);
    const Pose pose{look_at(eye, eye + Vec3(std::cos(a), std::sin(a), 0.3 * std::sin(3 * a))), 0};
    DepthImage depth(kCam.height, kCam.width);
    for (int v = 0; v < kCam.height; ++v)
      for (int u = 0; u < kCam.width; ++u) depth(v, u) = coin(rng) < 0.1f ? 0.0f : d(rng);
    const UpdateIndicesImage img = build_indices_image(grid, kCam, pose, depth, 0);
    EXPECT_EQ(listed(img), brute_force(grid, pose, depth)) << "scene " << scene;
    EXPECT_EQ(listed(img).size(), img.size());
  }
}

TEST(IndicesImage, CountsText) {
  VoxelGrid grid(grid_config());
  Rng rng(1);
  grid.insert(particle_at(Vec3(0.01, 0.01, 1.0)), rng, 0);
  const UpdateIndicesImage img =
      build_indices_image(grid, kCam, {Transform::identity(), 0}, DepthImage::Zero(kCam.height, kCam.width), 0);
  std::ostringstream out;
  img.write_counts(out);
  const std::string text = out.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), kCam.height);
  EXPECT_EQ(std::count(text.begin(), text.end(), '1'), 1);
}

TEST(ActivationRadius, DensityAtRadiusIsEpsilon) {
  for (double rho : {0.01, 0.02, 0.05, 0.1}) {
    for (double eps : {1e-6, 1e-3, 1.0}) {
      const double r = activation_radius(rho, eps);
      ASSERT_GT(r, 0.0);
      EXPECT_NEAR(gaussian3(Vec3(r, 0, 0), Vec3::Zero(), rho), eps, 1e-9 * eps);
    }
  }
}

TEST(ActivationRadius, ZeroWhenPeakIsBelowEpsilon) {
  const double rho = 1.0;
  const double peak = std::pow(2 * std::numbers::pi, -1.5);
  EXPECT_EQ(activation_radius(rho, peak * 1.01), 0.0);
  EXPECT_GT(activation_radius(rho, peak * 0.99), 0.0);
}

TEST(ActivationRadius, ShrinksAsEpsilonGrows) {
  double prev = std::numeric_limits<double>::infinity();
  for (double eps = 1e-9; eps < 1e3; eps *= 3) {
    const double r = activation_radius(0.05, eps);
    EXPECT_LE(r, prev);
    prev = r;
  }
}

TEST(ActivationBox, CenteredSphereIsSymmetric) {
  const double f = 500, z = 4.0, l = 0.3;
  const auto [lo, hi] = sphere_projection_extent(f, 0.0, z, l);
  const double expected = f * l / std::sqrt(z * z - l * l);
  EXPECT_NEAR(hi, expected, 1e-9);
  EXPECT_NEAR(lo, -expected, 1e-9);
}

TEST(ActivationBox, BoundsAreTightOverSampledSphere) {
  const Camera cam{500.0, 320.0, 240.0, 640, 480, 10.0};
  Rng rng(3);
  std::uniform_real_distribution<double> xy(-1.5, 1.5), z(1.0, 8.0), rad(0.05, 0.8);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 300; ++t) {
    const Vec3 c(xy(rng), xy(rng), z(rng));
    const double l = rad(rng);
    if (c.z() <= l) continue;
    const ActivationBox box = activation_box(cam, c, l, 0);
    ASSERT_FALSE(box.full_image);
    double u_lo = 1e300, u_hi = -1e300, v_lo = 1e300, v_hi = -1e300;
    for (int s = 0; s < 20000; ++s) {
      const Vec3 p = c + l * Vec3(n(rng), n(rng), n(rng)).normalized();
      const double u = cam.focal * p.x() / p.z() + cam.cx, v = cam.focal * p.y() / p.z() + cam.cy;
      u_lo = std::min(u_lo, u), u_hi = std::max(u_hi, u), v_lo = std::min(v_lo, v), v_hi = std::max(v_hi, v);
    }
    // Contains every sample and is no more than a little wider than the samples.
    EXPECT_LE(box.u_lo, u_lo + 1e-9);
    EXPECT_GE(box.u_hi, u_hi - 1e-9);
    EXPECT_LE(box.v_lo, v_lo + 1e-9);
    EXPECT_GE(box.v_hi, v_hi - 1e-9);
    const double tol = 0.02 * (u_hi - u_lo) + 1e-6;
    EXPECT_NEAR(box.u_lo, u_lo, tol);
    EXPECT_NEAR(box.u_hi, u_hi, tol);
    EXPECT_NEAR(box.v_lo, v_lo, 0.02 * (v_hi - v_lo) + 1e-6);
    EXPECT_NEAR(box.v_hi, v_hi, 0.02 * (v_hi - v_lo) + 1e-6);
  }
}

TEST(ActivationBox, SphereReachingTheCameraCoversTheImage) {
  const ActivationBox box = activation_box(kCam, Vec3(0, 0, 0.2), 0.3, 5);
  EXPECT_TRUE(box.full_image);
  EXPECT_EQ(box.u_min, 0);
  EXPECT_EQ(box.u_max, kCam.width - 1);
  EXPECT_EQ(box.v_min, 0);
  EXPECT_EQ(box.v_max, kCam.height - 1);
}

TEST(ActivationBox, DilationIsClampedToTheImage) {
  const ActivationBox box = activation_box(kCam, Vec3(0, 0, 3.0), 0.1, 5);
  EXPECT_FALSE(box.full_image);
  const int u0 = static_cast<int>(std::floor(box.u_lo)), u1 = static_cast<int>(std::floor(box.u_hi));
  EXPECT_EQ(box.u_min, u0 - 5);
  EXPECT_EQ(box.u_max, u1 + 5);
  EXPECT_TRUE(box.contains(32, 24));

  const ActivationBox edge = activation_box(kCam, Vec3(-2.3, 0, 3.0), 0.1, 5);
  EXPECT_EQ(edge.u_min, 0);
  const ActivationBox off = activation_box(kCam, Vec3(-20.0, 0, 3.0), 0.1, 0);
  EXPECT_TRUE(off.empty());
}

}  // namespace
}  // namespace pimap
