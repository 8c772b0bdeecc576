#include "pimap/simulator.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <Eigen/Geometry>

namespace pimap {

Shape Shape::box(const Vec3& size) {
  Shape s;
  s.kind = ShapeKind::kBox;
  s.size = size;
  return s;
}

Shape Shape::sphere(double radius) {
  Shape s;
  s.kind = ShapeKind::kSphere;
  s.radius = radius;
  return s;
}

Shape Shape::cylinder(double radius, double height) {
  Shape s;
  s.kind = ShapeKind::kCylinder;
  s.radius = radius;
  s.height = height;
  return s;
}

Shape Shape::mesh(std::vector<Vec3> vertices, std::vector<Eigen::Vector3i> faces) {
  Shape s;
  s.kind = ShapeKind::kMesh;
  s.vertices = std::move(vertices);
  s.faces = std::move(faces);
  return s;
}

namespace {

constexpr double kMinT = 1e-9;

std::optional<double> slab(const Vec3& o, const Vec3& d, const Vec3& lo, const Vec3& hi) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d(a) == 0.0) {
      if (o(a) < lo(a) || o(a) > hi(a)) return std::nullopt;
      continue;
    }
    double ta = (lo(a) - o(a)) / d(a);
    double tb = (hi(a) - o(a)) / d(a);
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1) return std::nullopt;
  if (t0 > kMinT) return t0;
  if (t1 > kMinT) return t1;
  return std::nullopt;
}

std::optional<double> smallest_positive_root(double a, double b, double c) {
  const double disc = b * b - 4 * a * c;
  if (disc < 0 || a == 0) return std::nullopt;
  const double sq = std::sqrt(disc);
  const double r0 = (-b - sq) / (2 * a);
  const double r1 = (-b + sq) / (2 * a);
  if (r0 > kMinT) return r0;
  if (r1 > kMinT) return r1;
  return std::nullopt;
}

}  // namespace

std::optional<double> Shape::intersect(const Vec3& o, const Vec3& d) const {
  switch (kind) {
    case ShapeKind::kBox:
      return slab(o, d, -0.5 * size, 0.5 * size);
    case ShapeKind::kSphere:
      return smallest_positive_root(d.squaredNorm(), 2 * o.dot(d), o.squaredNorm() - radius * radius);
    case ShapeKind::kCylinder: {
      std::optional<double> best;
      auto consider = [&](double t) {
        if (t > kMinT && (!best || t < *best)) best = t;
      };
      const double h = 0.5 * height;
      const double a = d.x() * d.x() + d.y() * d.y();
      const double b = 2 * (o.x() * d.x() + o.y() * d.y());
      const double c = o.x() * o.x() + o.y() * o.y() - radius * radius;
      const double disc = b * b - 4 * a * c;
      if (a > 0 && disc >= 0) {
        const double sq = std::sqrt(disc);
        for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
          const double z = o.z() + t * d.z();
          if (z >= -h && z <= h) consider(t);
        }
      }
      if (d.z() != 0) {
        for (double zc : {-h, h}) {
          const double t = (zc - o.z()) / d.z();
          const Vec3 p = o + t * d;
          if (p.x() * p.x() + p.y() * p.y() <= radius * radius) consider(t);
        }
      }
      return best;
    }
    case ShapeKind::kMesh: {
      const auto [lo, hi] = bounds();
      if (!slab(o, d, lo, hi) && !((o.array() >= lo.array()).all() && (o.array() <= hi.array()).all()))
        return std::nullopt;
      std::optional<double> best;
      for (const Eigen::Vector3i& f : faces) {
        // Moller-Trumbore
        const Vec3& v0 = vertices[f(0)];
        const Vec3 e1 = vertices[f(1)] - v0;
        const Vec3 e2 = vertices[f(2)] - v0;
        const Vec3 p = d.cross(e2);
        const double det = e1.dot(p);
        if (std::abs(det) < 1e-14) continue;
        const double inv = 1.0 / det;
        const Vec3 s = o - v0;
        const double u = s.dot(p) * inv;
        if (u < 0 || u > 1) continue;
        const Vec3 q = s.cross(e1);
        const double v = d.dot(q) * inv;
        if (v < 0 || u + v > 1) continue;
        const double t = e2.dot(q) * inv;
        if (t > kMinT && (!best || t < *best)) best = t;
      }
      return best;
    }
  }
  return std::nullopt;
}

std::pair<Vec3, Vec3> Shape::bounds() const {
  switch (kind) {
    case ShapeKind::kBox:
      return {-0.5 * size, 0.5 * size};
    case ShapeKind::kSphere:
      return {Vec3::Constant(-radius), Vec3::Constant(radius)};
    case ShapeKind::kCylinder:
      return {Vec3(-radius, -radius, -0.5 * height), Vec3(radius, radius, 0.5 * height)};
    case ShapeKind::kMesh: {
      if (vertices.empty()) return {Vec3::Zero(), Vec3::Zero()};
      Vec3 lo = vertices.front(), hi = vertices.front();
      for (const Vec3& v : vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
      }
      return {lo, hi};
    }
  }
  return {Vec3::Zero(), Vec3::Zero()};
}

Transform Trajectory::at(Step k) const {
  if (keys.empty()) return Transform::identity();
  if (k <= keys.front().step) return keys.front().pose;
  if (k >= keys.back().step) return keys.back().pose;
  auto hi = std::upper_bound(keys.begin(), keys.end(), k, [](Step s, const Keyframe& key) { return s < key.step; });
  auto lo = hi - 1;
  const double s = static_cast<double>(k - lo->step) / static_cast<double>(hi->step - lo->step);
  Transform out;
  out.translation = (1 - s) * lo->pose.translation + s * hi->pose.translation;
  const Eigen::Quaterniond q0(lo->pose.rotation), q1(hi->pose.rotation);
  out.rotation = q0.slerp(s, q1).toRotationMatrix();
  return out;
}

Trajectory Trajectory::fixed(const Transform& pose) { return Trajectory{{Keyframe{0, pose}}}; }

void NoiseSpec::validate() const {
  auto prob = [](double p, const char* what) {
    if (!(p >= 0 && p <= 1)) throw std::invalid_argument(std::string(what) + " must be in [0, 1]");
  };
  prob(mislabel_probability, "mislabel_probability");
  prob(missed_probability, "missed_probability");
  prob(speckle_probability, "speckle_probability");
  if (depth_slope < 0 || depth_offset < 0) throw std::invalid_argument("depth noise coefficients must be >= 0");
  if (transform_translation_sigma < 0 || transform_rotation_sigma < 0)
    throw std::invalid_argument("transform noise must be >= 0");
}

const SceneObject* Scene::find(InstanceId id) const {
  for (const SceneObject& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

void Scene::validate() const {
  camera.validate();
  noise.validate();
  if (frames < 0) throw std::invalid_argument("scene frame count must be >= 0");
  std::map<InstanceId, int> seen;
  for (const SceneObject& o : objects) {
    if (to_underlying(o.id) == kUnlabeledPixel || o.id == kUnlabeledInstance)
      throw std::invalid_argument("object id must be a positive integer below 2^32-1");
    if (seen[o.id]++) throw std::invalid_argument("duplicate object id " + std::to_string(to_underlying(o.id)));
    if (o.shape.kind == ShapeKind::kMesh) {
      for (const auto& f : o.shape.faces)
        for (int i = 0; i < 3; ++i)
          if (f(i) < 0 || f(i) >= static_cast<int>(o.shape.vertices.size()))
            throw std::invalid_argument("mesh face index out of range");
    }
  }
}

Keyframe camera_key(Step step, const Vec3& eye, const Vec3& target) { return {step, look_at(eye, target)}; }

InstanceId scheduled_id(const NoiseSpec& noise, InstanceId truth, Step k) {
  InstanceId id = truth;
  // Later switches chain on earlier ones.
  std::vector<IdSwitch> sorted = noise.id_switches;
  std::stable_sort(sorted.begin(), sorted.end(), [](const IdSwitch& a, const IdSwitch& b) { return a.step < b.step; });
  for (const IdSwitch& s : sorted)
    if (k >= s.step && id == s.from) id = s.to;
  return id;
}

namespace {

constexpr std::uint32_t kSpuriousOffset = 1000000;

struct Raycast {
  DepthImage depth;
  InstanceImage ids;
};

Raycast raycast(const Scene& scene, Step k) {
  const Camera& cam = scene.camera;
  const Transform cam_pose = scene.camera_path.at(k);
  std::vector<Transform> inv;
  std::vector<std::pair<Vec3, Vec3>> local_bounds;
  for (const SceneObject& o : scene.objects) {
    inv.push_back(o.trajectory.at(k).inverse());
    local_bounds.push_back(o.shape.bounds());
  }
  Raycast out;
  out.depth = DepthImage::Zero(cam.height, cam.width);
  out.ids = InstanceImage::Zero(cam.height, cam.width);
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      // Unnormalized direction with unit camera z: the hit parameter is z-depth.
      const Vec3 dir_cam((u + 0.5 - cam.cx) / cam.focal, (v + 0.5 - cam.cy) / cam.focal, 1.0);
      const Vec3 dir = cam_pose.rotation * dir_cam;
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t hit = 0;
      for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        const Vec3 o = inv[i] * cam_pose.translation;
        const Vec3 d = inv[i].rotation * dir;
        const auto t = scene.objects[i].shape.intersect(o, d);
        if (t && *t < best) {
          best = *t;
          hit = to_underlying(scene.objects[i].id);
        }
      }
      if (hit && best <= cam.max_range) {
        out.depth(v, u) = static_cast<float>(best);
        out.ids(v, u) = hit;
      }
    }
  }
  return out;
}

Transform perturb_transform(const Transform& T, const NoiseSpec& noise, Rng& rng) {
  if (noise.transform_translation_sigma <= 0 && noise.transform_rotation_sigma <= 0) return T;
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 rot(n(rng), n(rng), n(rng));
  Vec3 trans(n(rng), n(rng), n(rng));
  rot *= noise.transform_rotation_sigma;
  trans *= noise.transform_translation_sigma;
  Transform dT;
  if (rot.norm() > 0) dT.rotation = Eigen::AngleAxisd(rot.norm(), rot.normalized()).toRotationMatrix();
  dT.translation = trans;
  return dT * T;
}

}  // namespace

RenderedFrame render_frame(const Scene& scene, Step k, Rng& rng) {
  RenderedFrame out;
  Raycast rc = raycast(scene, k);
  out.true_depth = rc.depth;
  out.true_instances = rc.ids;

  MeasurementFrame& f = out.frame;
  f.step = k;
  f.pose = {scene.camera_path.at(k), k};
  f.depth = rc.depth;
  f.instances = InstanceImage::Zero(rc.ids.rows(), rc.ids.cols());

  // Reported ID per true object for this frame; 0 means missed.
  std::map<std::uint32_t, std::uint32_t> reported;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (const SceneObject& o : scene.objects) {
    std::uint32_t id = to_underlying(scheduled_id(scene.noise, o.id, k));
    if (!o.background) {
      if (scene.noise.missed_probability > 0 && uni(rng) < scene.noise.missed_probability) id = kUnlabeledPixel;
      if (scene.noise.mislabel_probability > 0 && uni(rng) < scene.noise.mislabel_probability && id != 0)
        id += kSpuriousOffset;
    }
    reported[to_underlying(o.id)] = id;
  }

  const bool depth_noise = scene.noise.depth_slope > 0 || scene.noise.depth_offset > 0;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int v = 0; v < f.depth.rows(); ++v) {
    for (int u = 0; u < f.depth.cols(); ++u) {
      const std::uint32_t truth = rc.ids(v, u);
      if (!truth) continue;
      if (depth_noise) {
        const double d = f.depth(v, u);
        const double noisy = d + (scene.noise.depth_slope * d + scene.noise.depth_offset) * gauss(rng);
        f.depth(v, u) = noisy > 0 && noisy <= scene.camera.max_range ? static_cast<float>(noisy) : 0.0f;
      }
      std::uint32_t id = reported[truth];
      if (scene.noise.speckle_probability > 0 && uni(rng) < scene.noise.speckle_probability) id = kUnlabeledPixel;
      f.instances(v, u) = valid_depth(f.depth(v, u)) ? id : kUnlabeledPixel;
    }
  }

  for (const SceneObject& o : scene.objects) {
    const std::uint32_t id = reported[to_underlying(o.id)];
    if (!id) continue;
    if (!(f.instances.array() == id).any()) continue;
    f.info[InstanceId{id}] = {o.label, o.background};
    if (o.background) continue;
    const Transform now = o.trajectory.at(k);
    const Transform before = o.trajectory.at(k - 1);
    Transform rel = now * before.inverse();
    if (!o.rigid) rel = Transform::from_translation(now.translation - before.translation);
    f.transforms[InstanceId{id}] = perturb_transform(rel, scene.noise, rng);
  }
  extract_measurements(f, scene.camera);
  return out;
}

const GroundTruthVoxel* GroundTruthMap::find(const VoxelIndex& index) const {
  auto it = std::lower_bound(voxels.begin(), voxels.end(), index, [](const GroundTruthVoxel& v, const VoxelIndex& i) {
    return VoxelIndexLess{}(v.index, i);
  });
  if (it == voxels.end() || it->index != index) return nullptr;
  return &*it;
}

GroundTruthBuilder::GroundTruthBuilder(const Scene& scene, double voxel_size, int log2_dim)
    : scene_(scene), voxel_size_(voxel_size), dim_(1 << log2_dim) {}

void GroundTruthBuilder::observe(Step k) {
  const Raycast rc = raycast(scene_, k);
  observe(k, rc.depth, rc.ids);
}

void GroundTruthBuilder::observe(Step k, const DepthImage& true_depth, const InstanceImage& true_instances) {
  const Transform cam_pose = scene_.camera_path.at(k);
  std::map<std::uint32_t, Transform> inv;
  for (const SceneObject& o : scene_.objects) inv[to_underlying(o.id)] = o.trajectory.at(k).inverse();
  for (int v = 0; v < true_depth.rows(); ++v) {
    for (int u = 0; u < true_depth.cols(); ++u) {
      const float d = true_depth(v, u);
      const std::uint32_t id = true_instances(v, u);
      if (!valid_depth(d) || !id) continue;
      const Vec3 world = cam_pose * unproject_pixel(scene_.camera, Pixel{u, v}, static_cast<double>(d));
      const Vec3 local = inv.at(id) * world;
      const Key key{std::llround(local.x() * 1000.0), std::llround(local.y() * 1000.0),
                    std::llround(local.z() * 1000.0)};
      local_points_[InstanceId{id}].try_emplace(key, local);
    }
  }
}

GroundTruthMap GroundTruthBuilder::map_at(Step k) const {
  GroundTruthMap map;
  map.step = k;
  map.voxel_size = voxel_size_;
  const VoxelIndex lo = voxel_of(scene_.camera_path.at(k).translation, voxel_size_) - VoxelIndex::Constant(dim_ / 2);
  const VoxelIndex hi = lo + VoxelIndex::Constant(dim_ - 1);
  std::unordered_map<VoxelIndex, std::map<InstanceId, std::size_t>, VoxelIndexHash> votes;
  for (const auto& [id, points] : local_points_) {
    const SceneObject* o = scene_.find(id);
    if (!o) continue;
    const Transform pose = o->trajectory.at(k);
    for (const auto& [key, local] : points) {
      const VoxelIndex v = voxel_of(pose * local, voxel_size_);
      if ((v.array() < lo.array()).any() || (v.array() > hi.array()).any()) continue;
      ++votes[v][id];
    }
  }
  map.voxels.reserve(votes.size());
  for (const auto& [v, counts] : votes) {
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
      if (it->second > best->second) best = it;
    const SceneObject* o = scene_.find(best->first);
    map.voxels.push_back({v, best->first, o->label, o->movable && !o->background, o->background});
  }
  std::sort(map.voxels.begin(), map.voxels.end(),
            [](const GroundTruthVoxel& a, const GroundTruthVoxel& b) { return VoxelIndexLess{}(a.index, b.index); });
  return map;
}

std::size_t GroundTruthBuilder::point_count() const {
  std::size_t n = 0;
  for (const auto& [id, pts] : local_points_) n += pts.size();
  return n;
}

std::vector<GroundTruthMap> build_ground_truth(const Scene& scene, const std::vector<Step>& steps, double voxel_size,
                                               int log2_dim) {
  GroundTruthBuilder builder(scene, voxel_size, log2_dim);
  std::vector<Step> sorted = steps;
  std::sort(sorted.begin(), sorted.end());
  std::vector<GroundTruthMap> out;
  Step next = sorted.empty() ? 0 : std::min<Step>(0, sorted.front());
  for (Step k : sorted) {
    for (; next <= k; ++next) builder.observe(next);
    out.push_back(builder.map_at(k));
  }
  return out;
}

}  // namespace pimap
