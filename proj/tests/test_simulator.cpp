#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "pimap/simulator.hpp"

namespace pimap {
namespace {

const Camera kCam{100.0, 32.0, 24.0, 64, 48, 10.0};

SceneObject object(std::uint32_t id, SemanticLabel label, Shape shape, const Vec3& at) {
  SceneObject o;
  o.id = InstanceId{id};
  o.label = label;
  o.shape = std::move(shape);
  o.trajectory = Trajectory::fixed(Transform::from_translation(at));
  return o;
}

// Camera at the origin looking along map +x.
Scene facing_wall(double distance) {
  Scene s;
  s.camera = kCam;
  s.frames = 3;
  s.camera_path.keys = {camera_key(0, Vec3::Zero(), Vec3(1, 0, 0))};
  s.objects.push_back(object(4, SemanticLabel::kWall, Shape::box(Vec3(0.2, 20, 20)), Vec3(distance + 0.1, 0, 0)));
  s.objects.back().background = true;
  s.objects.back().movable = false;
  return s;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  return dir;
}

TEST(Render, WallFillsTheImage) {
  Rng rng(1);
  const RenderedFrame r = render_frame(facing_wall(2.0), 0, rng);
  ASSERT_EQ(r.frame.depth.rows(), 48);
  ASSERT_EQ(r.frame.depth.cols(), 64);
  for (int v = 0; v < 48; ++v)
    for (int u = 0; u < 64; ++u) {
      EXPECT_NEAR(r.frame.depth(v, u), 2.0f, 1e-5f);
      EXPECT_EQ(r.frame.instances(v, u), 4u);
    }
  EXPECT_EQ(r.frame.points.size(), 64u * 48u);
  EXPECT_EQ(r.frame.info.at(InstanceId{4}).label, SemanticLabel::kWall);
  for (const MeasurementPoint& p : r.frame.points) EXPECT_NEAR(p.position.x(), 2.0, 1e-5);
}

TEST(Render, SphereDepthMatchesRayIntersection) {
  Scene s;
  s.camera = kCam;
  s.camera_path.keys = {camera_key(0, Vec3::Zero(), Vec3(1, 0, 0))};
  const Vec3 c(3.0, 0.2, -0.1);
  const double r = 0.8;
  s.objects.push_back(object(2, SemanticLabel::kMisc, Shape::sphere(r), c));
  Rng rng(1);
  const RenderedFrame out = render_frame(s, 0, rng);
  const Transform cam = s.camera_path.at(0);
  int hits = 0;
  for (int v = 0; v < 48; ++v)
    for (int u = 0; u < 64; ++u) {
      const Vec3 ray_cam = unproject_pixel(kCam, Pixel{u, v}, 1.0);
      const Vec3 d = cam.rotation * ray_cam;  // scaled so that camera z = 1
      const Vec3 oc = -c;
      const double a = d.squaredNorm(), b = 2 * oc.dot(d), cc = oc.squaredNorm() - r * r;
      const double disc = b * b - 4 * a * cc;
      if (disc < 0) {
        EXPECT_FALSE(valid_depth(out.frame.depth(v, u)));
        continue;
      }
      ++hits;
      const double t = (-b - std::sqrt(disc)) / (2 * a);
      EXPECT_NEAR(out.frame.depth(v, u), t, 1e-4) << u << "," << v;
      EXPECT_EQ(out.frame.instances(v, u), 2u);
    }
  EXPECT_GT(hits, 100);
}

TEST(Render, DepthNoiseHasRequestedSpread) {
  Scene s = facing_wall(3.0);
  s.noise.depth_slope = 0.01;
  s.noise.depth_offset = 0.02;
  Rng rng(5);
  double sum = 0, sq = 0;
  int n = 0;
  for (Step k = 0; k < 3; ++k) {
    const RenderedFrame r = render_frame(s, k, rng);
    for (int v = 0; v < 48; ++v)
      for (int u = 0; u < 64; ++u) {
        const double e = r.frame.depth(v, u) - r.true_depth(v, u);
        sum += e;
        sq += e * e;
        ++n;
      }
  }
  const double sigma = 0.01 * 3.0 + 0.02;
  EXPECT_NEAR(sum / n, 0.0, 4 * sigma / std::sqrt(n));
  EXPECT_NEAR(std::sqrt(sq / n), sigma, 0.05 * sigma);
}

TEST(Render, MissedAndMislabeledInstances) {
  Scene s = facing_wall(2.0);
  s.objects.push_back(object(7, SemanticLabel::kCar, Shape::box(Vec3(0.5, 0.5, 0.5)), Vec3(1.5, 0, 0)));
  s.noise.missed_probability = 1.0;
  Rng rng(1);
  RenderedFrame r = render_frame(s, 0, rng);
  EXPECT_FALSE(r.frame.info.count(InstanceId{7}));
  EXPECT_EQ(r.frame.instances(24, 32), 0u);
  EXPECT_EQ(r.frame.instances(0, 0), 4u);  // background is never dropped

  s.noise.missed_probability = 0.0;
  s.noise.mislabel_probability = 1.0;
  r = render_frame(s, 0, rng);
  EXPECT_EQ(r.frame.instances(24, 32), 1000007u);
  EXPECT_EQ(r.true_instances(24, 32), 7u);
}

TEST(Render, IdSwitchesChain) {
  NoiseSpec n;
  n.id_switches = {{5, InstanceId{3}, InstanceId{9}}, {8, InstanceId{9}, InstanceId{11}}};
  EXPECT_EQ(scheduled_id(n, InstanceId{3}, 4), InstanceId{3});
  EXPECT_EQ(scheduled_id(n, InstanceId{3}, 5), InstanceId{9});
  EXPECT_EQ(scheduled_id(n, InstanceId{3}, 8), InstanceId{11});
  EXPECT_EQ(scheduled_id(n, InstanceId{4}, 8), InstanceId{4});

  Scene s = facing_wall(2.0);
  s.objects.push_back(object(3, SemanticLabel::kCar, Shape::box(Vec3(0.5, 0.5, 0.5)), Vec3(1.5, 0, 0)));
  s.noise.id_switches = n.id_switches;
  Rng rng(1);
  EXPECT_EQ(render_frame(s, 4, rng).frame.instances(24, 32), 3u);
  const RenderedFrame after = render_frame(s, 5, rng);
  EXPECT_EQ(after.frame.instances(24, 32), 9u);
  EXPECT_EQ(after.true_instances(24, 32), 3u);
  EXPECT_TRUE(after.frame.info.count(InstanceId{9}));
}

TEST(Render, ReportsRelativeMotion) {
  const Scene s = demo::moving_box(30, 0.2);
  Rng rng(1);
  const RenderedFrame r = render_frame(s, 10, rng);
  const Transform& T = r.frame.transforms.at(InstanceId{3});
  EXPECT_NEAR((T.translation - Vec3(0, 0.2, 0)).norm(), 0.0, 1e-9);
  EXPECT_NEAR((T.rotation - Eigen::Matrix3d::Identity()).norm(), 0.0, 1e-12);
  EXPECT_FALSE(r.frame.transforms.count(InstanceId{2}));  // background
}

TEST(Render, DeterministicForASeed) {
  Scene s = demo::two_objects();
  s.noise.depth_slope = 0.001;
  s.noise.speckle_probability = 0.05;
  s.noise.transform_translation_sigma = 0.01;
  Rng a(42), b(42);
  for (Step k = 0; k < 3; ++k) {
    const RenderedFrame ra = render_frame(s, k, a), rb = render_frame(s, k, b);
    EXPECT_EQ(ra.frame.depth, rb.frame.depth);
    EXPECT_EQ(ra.frame.instances, rb.frame.instances);
    for (const auto& [id, T] : ra.frame.transforms) EXPECT_EQ(T.translation, rb.frame.transforms.at(id).translation);
  }
}

TEST(Trajectory, InterpolatesBetweenKeys) {
  Trajectory t;
  t.keys = {{0, Transform::identity()}, {10, Transform::from_axis_angle(Vec3::UnitZ(), M_PI / 2, Vec3(2, 0, 0))}};
  const Transform mid = t.at(5);
  EXPECT_NEAR((mid.translation - Vec3(1, 0, 0)).norm(), 0.0, 1e-12);
  EXPECT_NEAR((mid * Vec3(1, 0, 0) - mid.translation - Vec3(std::cos(M_PI / 4), std::sin(M_PI / 4), 0)).norm(), 0.0,
              1e-12);
  EXPECT_EQ(t.at(-3).translation, Vec3::Zero());
  EXPECT_EQ(t.at(99).translation, Vec3(2, 0, 0));
}

TEST(GroundTruth, MovingBoxShiftsOneVoxelPerFrame) {
  const Scene s = demo::moving_box(30, 0.2);
  GroundTruthBuilder gt(s, 0.2, 7);
  for (Step k = 0; k <= 10; ++k) gt.observe(k);
  const GroundTruthMap a = gt.map_at(10), b = gt.map_at(11);
  std::set<VoxelIndex, VoxelIndexLess> box_a, box_b, wall_a, wall_b;
  for (const auto& v : a.voxels) (v.instance == InstanceId{3} ? box_a : wall_a).insert(v.index);
  for (const auto& v : b.voxels) (v.instance == InstanceId{3} ? box_b : wall_b).insert(v.index);
  ASSERT_FALSE(box_a.empty());
  std::set<VoxelIndex, VoxelIndexLess> shifted;
  for (const VoxelIndex& v : box_a) shifted.insert(v + VoxelIndex(0, 1, 0));
  EXPECT_EQ(shifted, box_b);
  // Static structure is unchanged away from voxels it shares with the box.
  for (const auto& v : box_a) wall_a.erase(v), wall_b.erase(v);
  for (const auto& v : box_b) wall_a.erase(v), wall_b.erase(v);
  EXPECT_EQ(wall_a, wall_b);
  for (const auto& v : a.voxels) {
    EXPECT_EQ(v.movable, v.instance == InstanceId{3});
    EXPECT_EQ(v.background, v.instance != InstanceId{3});
  }
}

TEST(GroundTruth, MajorityLabelWithTiesToSmallerId) {
  Scene s;
  s.camera = kCam;
  s.camera_path.keys = {camera_key(0, Vec3::Zero(), Vec3(1, 0, 0))};
  s.objects.push_back(object(5, SemanticLabel::kCar, Shape::box(Vec3::Ones()), Vec3(10, 0, 0)));
  s.objects.push_back(object(6, SemanticLabel::kChair, Shape::box(Vec3::Ones()), Vec3(10, 0, 0)));
  // Pixels (32..36, 24) at 1.1 m all fall into one 0.2 m voxel.
  DepthImage depth = DepthImage::Zero(48, 64);
  InstanceImage ids = InstanceImage::Zero(48, 64);
  for (int u = 32; u <= 36; ++u) {
    depth(24, u) = 1.1f;
    ids(24, u) = u <= 34 ? 6 : 5;
  }
  GroundTruthBuilder gt(s, 0.2, 7);
  gt.observe(0, depth, ids);
  GroundTruthMap m = gt.map_at(0);
  ASSERT_EQ(m.voxels.size(), 1u);
  EXPECT_EQ(m.voxels[0].instance, InstanceId{6});
  EXPECT_EQ(m.voxels[0].label, SemanticLabel::kChair);

  ids(24, 34) = 5;
  ids(24, 32) = 0;  // unlabeled pixels carry no vote
  GroundTruthBuilder tie(s, 0.2, 7);
  tie.observe(0, depth, ids);
  m = tie.map_at(0);
  ASSERT_EQ(m.voxels.size(), 1u);
  EXPECT_EQ(m.voxels[0].instance, InstanceId{5});
  EXPECT_TRUE(m.find(m.voxels[0].index));
  EXPECT_FALSE(m.find(m.voxels[0].index + VoxelIndex(1, 0, 0)));
}

TEST(SceneJson, RoundTrip) {
  Scene s = demo::two_objects();
  s.noise.depth_slope = 0.002;
  s.noise.id_switches = {{4, InstanceId{3}, InstanceId{8}}};
  s.objects.push_back(object(9, SemanticLabel::kPole, Shape::cylinder(0.1, 2.0), Vec3(1, 2, 3)));
  s.objects.push_back(object(10, SemanticLabel::kMisc,
                             Shape::mesh({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)}, {Eigen::Vector3i(0, 1, 2)}),
                             Vec3(0, 0, 0)));
  const std::string text = scene_to_json(s);
  const Scene back = parse_scene(text);
  EXPECT_EQ(scene_to_json(back), text);
  EXPECT_EQ(back.objects.size(), s.objects.size());
  EXPECT_EQ(back.noise.id_switches.size(), 1u);
  EXPECT_EQ(back.objects.back().shape.faces.size(), 1u);
}

TEST(SceneJson, RejectsBadInput) {
  EXPECT_ANY_THROW(parse_scene("{"));
  EXPECT_ANY_THROW(parse_scene(R"({"objects": [{"id": 2, "shape": {"type": "blob"}}]})"));
  EXPECT_ANY_THROW(parse_scene(R"({"objects": [{"id": 2, "label": "unicorn", "shape": {"type": "sphere", "radius": 1}}]})"));
  EXPECT_ANY_THROW(parse_scene(
      R"({"objects": [{"id": 2, "shape": {"type": "sphere", "radius": 1}}, {"id": 2, "shape": {"type": "sphere", "radius": 1}}]})"));
  const Scene ok = parse_scene(R"({"frames": 4, "objects": [{"id": 2, "label": "car", "shape": {"type": "box", "size": [1, 2, 3]},
      "trajectory": [{"step": 0, "position": [1, 0, 0]}, {"step": 3, "position": [1, 3, 0], "axis": [0, 0, 1], "angle_deg": 90}]}]})");
  EXPECT_EQ(ok.frames, 4);
  EXPECT_NEAR((ok.objects[0].trajectory.at(3) * Vec3(1, 0, 0) - Vec3(1, 4, 0)).norm(), 0.0, 1e-12);
}

TEST(SceneValidate, RejectsBadValues) {
  Scene s = demo::two_objects();
  EXPECT_NO_THROW(s.validate());
  s.noise.missed_probability = 2.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = demo::two_objects();
  s.objects.push_back(s.objects.front());
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = demo::two_objects();
  s.objects.front().id = InstanceId{0};
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(SequenceIo, ImagesRoundTrip) {
  const auto dir = temp_dir("pimap_test_images");
  std::filesystem::create_directories(dir);
  DepthImage d(3, 4);
  d << 1, 2, 3, 4, 0, -1, 0.5f, 7.25f, 8, 9, 10, 11;
  InstanceImage ids(3, 4);
  ids << 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 4000000000u;
  write_depth_image(dir / "a.depth", d);
  write_instance_image(dir / "a.inst", ids);
  EXPECT_EQ(read_depth_image(dir / "a.depth"), d);
  EXPECT_EQ(read_instance_image(dir / "a.inst"), ids);
  // Truncated payload.
  std::filesystem::resize_file(dir / "a.depth", 20);
  EXPECT_THROW(read_depth_image(dir / "a.depth"), std::runtime_error);
  EXPECT_THROW(read_instance_image(dir / "a.depth"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(SequenceIo, FramesReadBackAsWritten) {
  const auto dir = temp_dir("pimap_test_sequence");
  const Scene s = demo::two_objects();
  Rng rng(3);
  std::vector<RenderedFrame> frames;
  {
    SequenceWriter w(dir, s, 0.2, 6);
    GroundTruthBuilder gt(s, 0.2, 6);
    for (Step k = 0; k < 3; ++k) {
      frames.push_back(render_frame(s, k, rng));
      gt.observe(k, frames.back().true_depth, frames.back().true_instances);
      const GroundTruthMap m = gt.map_at(k);
      w.write(frames.back(), &m);
    }
    w.finish();
  }
  const SequenceInfo info = read_sequence_info(dir);
  EXPECT_EQ(info.frames, 3);
  EXPECT_EQ(info.camera.width, s.camera.width);
  EXPECT_EQ(info.log2_dim, 6);
  EXPECT_EQ(info.labels.at(InstanceId{3}).label, SemanticLabel::kCar);
  EXPECT_EQ(info.gt_objects.at(InstanceId{2}).first, SemanticLabel::kChair);
  for (Step k = 0; k < 3; ++k) {
    const MeasurementFrame f = read_frame(dir, info, k);
    const MeasurementFrame& w = frames[static_cast<std::size_t>(k)].frame;
    EXPECT_EQ(f.depth, w.depth);
    EXPECT_EQ(f.instances, w.instances);
    EXPECT_NEAR((f.pose.camera_to_map.matrix() - w.pose.camera_to_map.matrix()).norm(), 0.0, 1e-12);
    ASSERT_EQ(f.transforms.size(), w.transforms.size());
    EXPECT_EQ(f.points.size(), w.points.size());
    const auto gt = read_ground_truth(dir, k, 0.2);
    ASSERT_TRUE(gt);
    EXPECT_FALSE(gt->voxels.empty());
    EXPECT_EQ(*read_true_instances(dir, k), frames[static_cast<std::size_t>(k)].true_instances);
  }
  EXPECT_FALSE(read_ground_truth(dir, 7, 0.2));
  EXPECT_THROW(read_frame(dir, info, 7), std::runtime_error);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace pimap
