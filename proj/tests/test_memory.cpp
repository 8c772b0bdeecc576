#include <filesystem>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "pimap/memory.hpp"

namespace pimap {
namespace {

// Surface of an axis-aligned box sampled on a regular lattice.
std::vector<Vec3> box_surface(const Vec3& lo, const Vec3& hi, double step) {
  std::vector<Vec3> out;
  for (double x = lo.x(); x <= hi.x() + 1e-9; x += step)
    for (double y = lo.y(); y <= hi.y() + 1e-9; y += step)
      for (double z = lo.z(); z <= hi.z() + 1e-9; z += step) {
        const bool face = std::abs(x - lo.x()) < 1e-9 || std::abs(x - hi.x()) < 1e-9 || std::abs(y - lo.y()) < 1e-9 ||
                          std::abs(y - hi.y()) < 1e-9 || std::abs(z - lo.z()) < 1e-9 || std::abs(z - hi.z()) < 1e-9;
        if (face) out.emplace_back(x, y, z);
      }
  return out;
}

// A body with a cabin at one end, so it has no rigid symmetry.
std::vector<Vec3> car_shape() {
  auto body = box_surface(Vec3(-1.0, -0.5, 0.0), Vec3(1.0, 0.5, 0.6), 0.05);
  const auto cabin = box_surface(Vec3(0.2, -0.4, 0.6), Vec3(0.9, 0.4, 1.0), 0.05);
  body.insert(body.end(), cabin.begin(), cabin.end());
  return body;
}

Template make_template(const std::vector<Vec3>& points, double weight, SemanticLabel label = SemanticLabel::kCar) {
  Template t;
  t.label = label;
  t.points = points;
  t.weights.assign(points.size(), weight);
  return t;
}

std::vector<VoxelIndex> shell(int n) {
  std::vector<VoxelIndex> out;
  for (int x = 0; x < n; ++x)
    for (int y = 0; y < n; ++y)
      for (int z = 0; z < n; ++z)
        if (x == 0 || y == 0 || z == 0 || x == n - 1 || y == n - 1 || z == n - 1) out.emplace_back(x, y, z);
  return out;
}

// Marches each direction in small steps instead of voxel traversal.
double completeness_oracle(const std::vector<VoxelIndex>& voxels, double l, int rays) {
  std::set<VoxelIndex, VoxelIndexLess> set(voxels.begin(), voxels.end());
  VoxelIndex lo = voxels.front(), hi = voxels.front();
  Vec3 c = Vec3::Zero();
  for (const VoxelIndex& v : voxels) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
    c += voxel_center(v, l);
  }
  c /= static_cast<double>(voxels.size());
  const VoxelIndex start = voxel_of(c, l);
  int hits = 0;
  for (const Vec3& d : fibonacci_directions(rays)) {
    for (double t = 0.0;; t += 1e-3 * l) {
      const VoxelIndex v = voxel_of(c + t * d, l);
      if ((v.array() < lo.array()).any() || (v.array() > hi.array()).any()) break;
      if (v != start && set.count(v)) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / rays;
}

TEST(Fibonacci, UnitDirectionsSpreadEvenly) {
  const auto dirs = fibonacci_directions(1000);
  ASSERT_EQ(dirs.size(), 1000u);
  Vec3 mean = Vec3::Zero();
  for (const Vec3& d : dirs) {
    EXPECT_NEAR(d.norm(), 1.0, 1e-12);
    mean += d;
  }
  EXPECT_LT((mean / 1000).norm(), 1e-2);
}

TEST(Completeness, ClosedShellIsComplete) {
  EXPECT_EQ(completeness(shell(7), 0.2, 1000), 1.0);
}

TEST(Completeness, SingleVoxelIsNotComplete) {
  EXPECT_EQ(completeness({VoxelIndex(3, 4, 5)}, 0.2, 1000), 0.0);
  EXPECT_EQ(completeness({}, 0.2, 1000), 0.0);
}

TEST(Completeness, LowerHemisphereShell) {
  std::vector<VoxelIndex> half;
  for (int x = -8; x <= 8; ++x)
    for (int y = -8; y <= 8; ++y)
      for (int z = -8; z <= 0; ++z) {
        const double r = Vec3(x, y, z).norm();
        if (r >= 7.0 && r < 8.0) half.emplace_back(x, y, z);
      }
  const double c = completeness(half, 0.2, 1000);
  EXPECT_NEAR(c, completeness_oracle(half, 0.2, 1000), 0.01);
  EXPECT_GT(c, 0.4);
  EXPECT_LT(c, 0.8);
}

TEST(Completeness, OpenBoxMatchesOracle) {
  auto box = shell(9);
  std::erase_if(box, [](const VoxelIndex& v) { return v.z() == 8 && v.x() > 0 && v.x() < 8 && v.y() > 0 && v.y() < 8; });
  EXPECT_NEAR(completeness(box, 0.2, 500), completeness_oracle(box, 0.2, 500), 0.01);
}

// Direct voxel sum: min(template mass, 1) * h over the region, over the number of informative voxels.
double similarity_oracle(const MatchEvidence& ev, const Template& t, const Transform& T) {
  std::map<VoxelIndex, double, VoxelIndexLess> mass;
  for (std::size_t i = 0; i < t.points.size(); ++i) mass[voxel_of(T * t.points[i], ev.voxel_size)] += t.weights[i];
  double sum = 0.0;
  for (const auto& [v, h] : ev.h) {
    if ((v.array() < ev.box_min.array()).any() || (v.array() > ev.box_max.array()).any()) continue;
    auto it = mass.find(v);
    if (it != mass.end()) sum += std::min(it->second, 1.0) * h;
  }
  return sum / static_cast<double>(ev.informative);
}

TEST(Similarity, EmptyEvidenceThrows) {
  EXPECT_THROW(similarity(make_evidence({}, 0.2), make_template({Vec3::Zero()}, 1.0), Transform::identity()),
               std::invalid_argument);
}

TEST(Similarity, SaturatedMatchScoresOne) {
  const auto pts = box_surface(Vec3(0, 0, 0), Vec3(1, 1, 1), 0.05);
  const MatchEvidence ev = make_evidence(pts, 0.2);
  EXPECT_DOUBLE_EQ(similarity(ev, make_template(pts, 1.0), Transform::identity()), 1.0);
  // Far away: no overlap.
  EXPECT_EQ(similarity(ev, make_template(pts, 1.0), Transform::from_translation(Vec3(10, 0, 0))), 0.0);
}

TEST(Similarity, TemplateInFreeSpaceScoresNegative) {
  // Rays to the far faces of a hollow box cross its interior.
  const Vec3 o(0.013, 0.017, 0.011);
  std::vector<Vec3> hollow;
  for (const Vec3& p : box_surface(Vec3(0, 0, 0), Vec3(1.2, 1.2, 1.2), 0.05)) hollow.push_back(p + o);
  const MatchEvidence ev = make_evidence(hollow, Vec3(0.6, 0.6, -5.0), 0.2);
  EXPECT_GT(ev.informative, make_evidence(hollow, 0.2).informative);
  std::vector<Vec3> core;
  for (const Vec3& p : box_surface(Vec3(0.45, 0.45, 0.45), Vec3(0.75, 0.75, 0.75), 0.05)) core.push_back(p + o);
  EXPECT_LT(similarity(ev, make_template(core, 1.0), Transform::identity()), 0.0);
}

TEST(Similarity, MatchesOracleAndIsTranslationEquivariant) {
  Rng rng(7);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::uniform_real_distribution<double> w(0.01, 0.4);
  std::uniform_int_distribution<int> shift(-20, 20);
  // Off the voxel boundaries so whole-voxel shifts cannot flip a floor().
  std::vector<Vec3> shape;
  for (const Vec3& p : car_shape()) shape.push_back(p + Vec3(0.013, 0.017, 0.011));
  Template t = make_template(shape, 0.0);
  for (double& x : t.weights) x = w(rng);
  const MatchEvidence ev = make_evidence(shape, Vec3(5.0, 3.0, 2.0), 0.2);
  for (int i = 0; i < 50; ++i) {
    const Transform S = Transform::from_axis_angle(Vec3(u(rng), u(rng), 1.0), u(rng), Vec3(u(rng), u(rng), u(rng)));
    const double s = similarity(ev, t, S);
    EXPECT_NEAR(s, similarity_oracle(ev, t, S), 1e-12);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
    // Moving evidence and pose by whole voxels leaves the score unchanged.
    const Vec3 d = 0.2 * Vec3(shift(rng), shift(rng), shift(rng));
    std::vector<Vec3> moved;
    for (const Vec3& p : shape) moved.push_back(p + d);
    const MatchEvidence ev2 = make_evidence(moved, Vec3(5.0, 3.0, 2.0) + d, 0.2);
    EXPECT_NEAR(similarity(ev2, t, Transform::from_translation(d) * S), s, 1e-9);
  }
}

// Points whose sensor ray meets no other surface voxel first.
std::vector<Vec3> visible_from(const std::vector<Vec3>& points, const Vec3& sensor, double l) {
  std::set<VoxelIndex, VoxelIndexLess> surface;
  for (const Vec3& p : points) surface.insert(voxel_of(p, l));
  std::vector<Vec3> out;
  for (const Vec3& p : points) {
    const Vec3 d = p - sensor;
    const auto ray = cast_ray(sensor, d.normalized(), l, d.norm());
    bool blocked = false;
    for (std::size_t i = 0; i + 2 < ray.size(); ++i) blocked |= surface.count(ray[i]) > 0;
    if (!blocked) out.push_back(p);
  }
  return out;
}

TEST(Match, RecoversPlantedTransform) {
  const auto shape = car_shape();
  TemplateLibrary lib;
  lib.add(make_template(shape, 0.2));
  MemoryParams params;
  Rng rng(3);
  int recovered = 0;
  for (int trial = 0; trial < 5; ++trial) {
    std::uniform_real_distribution<double> yaw(-M_PI, M_PI), off(-3.0, 3.0);
    const Transform planted = Transform::from_axis_angle(Vec3::UnitZ(), yaw(rng), Vec3(off(rng), off(rng), 0.0));
    const Vec3 sensor = planted * Vec3(0, -6.0, 3.0);
    std::vector<Vec3> all;
    for (const Vec3& p : shape) all.push_back(planted * p);
    // Points only: free voxels in the box would cap the score below the threshold.
    const MatchEvidence ev = make_evidence(visible_from(all, sensor, 0.2), 0.2);
    const auto m = match(ev, lib, SemanticLabel::kCar, params, rng);
    ASSERT_TRUE(m);
    EXPECT_GE(m->score, params.score_threshold);
    // Every template point lands within one voxel of where it was planted.
    double worst = 0.0;
    for (const Vec3& p : shape) worst = std::max(worst, (m->transform * p - planted * p).norm());
    recovered += worst < 0.2;
  }
  EXPECT_EQ(recovered, 5);
}

TEST(Match, SphereDoesNotMatchBox) {
  TemplateLibrary lib;
  lib.add(make_template(box_surface(Vec3(-0.6, -0.6, -0.6), Vec3(0.6, 0.6, 0.6), 0.05), 0.2));
  std::vector<Vec3> sphere;
  for (const Vec3& d : fibonacci_directions(4000)) sphere.push_back(0.6 * d);
  const MatchEvidence ev = make_evidence(sphere, Vec3(0, -5.0, 0), 0.2);
  Rng rng(4);
  MemoryParams params;
  params.score_threshold = 0.9;
  EXPECT_FALSE(match(ev, lib, SemanticLabel::kCar, params, rng));
}

TEST(Match, WrongLabelOrEmptyLibrary) {
  TemplateLibrary lib;
  Rng rng(1);
  const MatchEvidence ev = make_evidence(car_shape(), 0.2);
  EXPECT_FALSE(match(ev, lib, SemanticLabel::kCar, MemoryParams{}, rng));
  lib.add(make_template(car_shape(), 0.2));
  EXPECT_FALSE(match(ev, lib, SemanticLabel::kPedestrian, MemoryParams{}, rng));
}

void fill_shell(VoxelGrid& grid, InstanceId id, const Vec3& offset, int n, Rng& rng) {
  for (const VoxelIndex& v : shell(n)) {
    Particle p;
    p.position = voxel_center(v, grid.voxel_size()) + offset;
    p.weight = 1.0;
    p.instance = id;
    p.valid = true;
    grid.insert(p, rng, 0);
  }
}

TEST(Store, CompleteInstanceIsStoredOnceThenPruned) {
  GridConfig gc;
  gc.log2_dim = 5;
  VoxelGrid grid(gc);
  InstanceRegistry reg;
  Rng rng(1);
  reg.ensure(InstanceId{4}, SemanticLabel::kCar, false, true, 0);
  fill_shell(grid, InstanceId{4}, Vec3(0, 0, 0), 6, rng);
  TemplateLibrary lib;
  double c = 0.0;
  EXPECT_EQ(maybe_store_template(grid, reg, InstanceId{4}, FilterParams{}, MemoryParams{}, lib, 9, &c),
            StoreOutcome::kStored);
  EXPECT_EQ(c, 1.0);
  ASSERT_EQ(lib.size(), 1u);
  const Template& t = lib.templates(SemanticLabel::kCar)[0];
  EXPECT_EQ(t.points.size(), shell(6).size());
  EXPECT_EQ(t.created, 9);
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : t.points) mean += p;
  EXPECT_LT((mean / static_cast<double>(t.points.size())).norm(), 1e-9);
  EXPECT_EQ(maybe_store_template(grid, reg, InstanceId{4}, FilterParams{}, MemoryParams{}, lib, 10),
            StoreOutcome::kPruned);
  EXPECT_EQ(lib.size(), 1u);
}

TEST(Store, IneligibleInstances) {
  GridConfig gc;
  gc.log2_dim = 5;
  VoxelGrid grid(gc);
  InstanceRegistry reg;
  Rng rng(1);
  TemplateLibrary lib;
  EXPECT_EQ(maybe_store_template(grid, reg, InstanceId{9}, FilterParams{}, MemoryParams{}, lib, 0),
            StoreOutcome::kUnknownInstance);
  reg.ensure(InstanceId{1}, SemanticLabel::kGround, true, false, 0);
  EXPECT_EQ(maybe_store_template(grid, reg, InstanceId{1}, FilterParams{}, MemoryParams{}, lib, 0),
            StoreOutcome::kNotEligible);
  // One face only.
  reg.ensure(InstanceId{5}, SemanticLabel::kCar, false, true, 0);
  for (int x = 0; x < 5; ++x)
    for (int y = 0; y < 5; ++y) {
      Particle p;
      p.position = voxel_center(VoxelIndex(x, y, 0), 0.2);
      p.weight = 1.0;
      p.instance = InstanceId{5};
      p.valid = true;
      grid.insert(p, rng, 0);
    }
  EXPECT_EQ(maybe_store_template(grid, reg, InstanceId{5}, FilterParams{}, MemoryParams{}, lib, 0),
            StoreOutcome::kNotComplete);
  EXPECT_TRUE(lib.empty());
}

TEST(TemplateIo, RoundTrip) {
  Template t = make_template({Vec3(0.1, -0.2, 0.3), Vec3(1.0 / 3.0, 2.0, -1e-7)}, 0.0, SemanticLabel::kChair);
  t.weights = {0.125, 1.0 / 7.0};
  t.source = InstanceId{12};
  t.created = 33;
  t.anchor = Vec3(1, 2, 3);
  std::stringstream s;
  write_template(t, s);
  const Template back = read_template(s);
  EXPECT_EQ(back.label, SemanticLabel::kChair);
  EXPECT_EQ(back.points, t.points);
  EXPECT_EQ(back.weights, t.weights);
  EXPECT_EQ(back.source, InstanceId{12});
  EXPECT_EQ(back.created, 33);
  EXPECT_EQ(back.anchor, t.anchor);

  std::stringstream bad("PIMAP-TEMPLATE\nversion 1\nlabel chair\ncount 5\nanchor 0 0 0\nsource 1\nstep 0\n1 2 3 4\n");
  EXPECT_THROW(read_template(bad), std::runtime_error);
}

TEST(TemplateIo, LibraryDirectoryRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "pimap_test_library";
  std::filesystem::remove_all(dir);
  TemplateLibrary lib;
  lib.add(make_template({Vec3(0, 0, 0)}, 1.0, SemanticLabel::kCar));
  lib.add(make_template({Vec3(1, 0, 0)}, 1.0, SemanticLabel::kCar));
  lib.add(make_template({Vec3(2, 0, 0)}, 1.0, SemanticLabel::kChair));
  lib.save(dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "template_car_1.tpl"));
  const TemplateLibrary back = TemplateLibrary::load(dir);
  EXPECT_EQ(back.size(), 3u);
  EXPECT_EQ(back.templates(SemanticLabel::kChair)[0].points[0], Vec3(2, 0, 0));
  std::filesystem::remove_all(dir);
  EXPECT_TRUE(TemplateLibrary::load(dir).empty());
}

TEST(MemoryParams, Validation) {
  EXPECT_NO_THROW(MemoryParams{}.validate());
  MemoryParams p;
  p.completeness_threshold = 1.5;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = MemoryParams{};
  p.ransac_iterations = 0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace pimap
