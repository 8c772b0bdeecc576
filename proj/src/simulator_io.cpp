#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <Eigen/Geometry>
#include <json.hpp>

#include "pimap/simulator.hpp"

namespace pimap {

using nlohmann::json;

namespace {

Vec3 vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw std::runtime_error(std::string(what) + " must be an array of 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json to_json(const Transform& T) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) rows.push_back(json::array({T.rotation(r, 0), T.rotation(r, 1), T.rotation(r, 2)}));
  return {{"position", to_json(T.translation)}, {"rotation", rows}};
}

Transform pose_from_json(const json& j) {
  Transform T;
  if (j.contains("position")) T.translation = vec3(j.at("position"), "position");
  if (j.contains("rotation")) {
    const json& rows = j.at("rotation");
    if (!rows.is_array() || rows.size() != 3) throw std::runtime_error("rotation must be 3 rows");
    for (int r = 0; r < 3; ++r) T.rotation.row(r) = vec3(rows[r], "rotation row").transpose();
  } else if (j.contains("axis")) {
    const double deg = j.value("angle_deg", 0.0);
    T.rotation = Eigen::AngleAxisd(deg * M_PI / 180.0, vec3(j.at("axis"), "axis").normalized()).toRotationMatrix();
  }
  if (!T.is_valid(1e-6)) throw std::runtime_error("keyframe rotation is not orthonormal");
  return T;
}

Trajectory trajectory_from_json(const json& j, bool camera) {
  Trajectory t;
  if (j.is_object()) {
    t.keys.push_back({0, pose_from_json(j)});
    return t;
  }
  for (const json& k : j) {
    const Step step = k.value("step", Step{0});
    if (camera && k.contains("eye")) {
      t.keys.push_back(camera_key(step, vec3(k.at("eye"), "eye"), vec3(k.at("target"), "target")));
    } else {
      t.keys.push_back({step, pose_from_json(k)});
    }
  }
  std::stable_sort(t.keys.begin(), t.keys.end(), [](const Keyframe& a, const Keyframe& b) { return a.step < b.step; });
  return t;
}

json trajectory_to_json(const Trajectory& t) {
  json out = json::array();
  for (const Keyframe& k : t.keys) {
    json key = to_json(k.pose);
    key["step"] = k.step;
    out.push_back(key);
  }
  return out;
}

Shape shape_from_json(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "box") return Shape::box(vec3(j.at("size"), "box size"));
  if (type == "sphere") return Shape::sphere(j.at("radius").get<double>());
  if (type == "cylinder") return Shape::cylinder(j.at("radius").get<double>(), j.at("height").get<double>());
  if (type == "mesh") {
    std::vector<Vec3> verts;
    std::vector<Eigen::Vector3i> faces;
    for (const json& v : j.at("vertices")) verts.push_back(vec3(v, "vertex"));
    for (const json& f : j.at("faces")) faces.emplace_back(f.at(0).get<int>(), f.at(1).get<int>(), f.at(2).get<int>());
    return Shape::mesh(std::move(verts), std::move(faces));
  }
  throw std::runtime_error("unknown shape type '" + type + "'");
}

json shape_to_json(const Shape& s) {
  switch (s.kind) {
    case ShapeKind::kBox:
      return {{"type", "box"}, {"size", to_json(s.size)}};
    case ShapeKind::kSphere:
      return {{"type", "sphere"}, {"radius", s.radius}};
    case ShapeKind::kCylinder:
      return {{"type", "cylinder"}, {"radius", s.radius}, {"height", s.height}};
    case ShapeKind::kMesh: {
      json verts = json::array(), faces = json::array();
      for (const Vec3& v : s.vertices) verts.push_back(to_json(v));
      for (const auto& f : s.faces) faces.push_back(json::array({f(0), f(1), f(2)}));
      return {{"type", "mesh"}, {"vertices", verts}, {"faces", faces}};
    }
  }
  return {};
}

}  // namespace

Scene parse_scene(const std::string& text) {
  Scene scene;
  try {
    const json j = json::parse(text);
    scene.name = j.value("name", std::string("scene"));
    scene.frames = j.value("frames", 10);
    if (j.contains("camera")) {
      const json& c = j.at("camera");
      scene.camera.focal = c.value("focal", scene.camera.focal);
      scene.camera.width = c.value("width", scene.camera.width);
      scene.camera.height = c.value("height", scene.camera.height);
      scene.camera.cx = c.value("cx", scene.camera.width / 2.0);
      scene.camera.cy = c.value("cy", scene.camera.height / 2.0);
      scene.camera.max_range = c.value("max_range", scene.camera.max_range);
    }
    if (j.contains("camera_path")) scene.camera_path = trajectory_from_json(j.at("camera_path"), true);
    if (j.contains("noise")) {
      const json& n = j.at("noise");
      NoiseSpec& ns = scene.noise;
      ns.depth_slope = n.value("depth_slope", 0.0);
      ns.depth_offset = n.value("depth_offset", 0.0);
      ns.mislabel_probability = n.value("mislabel_probability", 0.0);
      ns.missed_probability = n.value("missed_probability", 0.0);
      ns.speckle_probability = n.value("speckle_probability", 0.0);
      ns.transform_translation_sigma = n.value("transform_translation_sigma", 0.0);
      ns.transform_rotation_sigma = n.value("transform_rotation_sigma", 0.0);
      if (n.contains("id_switches")) {
        for (const json& s : n.at("id_switches"))
          ns.id_switches.push_back({s.at("step").get<Step>(), InstanceId{s.at("from").get<std::uint32_t>()},
                                    InstanceId{s.at("to").get<std::uint32_t>()}});
      }
    }
    for (const json& o : j.value("objects", json::array())) {
      SceneObject obj;
      obj.id = InstanceId{o.at("id").get<std::uint32_t>()};
      obj.label = parse_semantic_label(o.value("label", std::string("misc")));
      obj.background = o.value("background", false);
      obj.movable = o.value("movable", !obj.background);
      obj.rigid = o.value("rigid", true);
      obj.shape = shape_from_json(o.at("shape"));
      if (o.contains("trajectory")) obj.trajectory = trajectory_from_json(o.at("trajectory"), false);
      scene.objects.push_back(std::move(obj));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("scene file: ") + e.what());
  }
  scene.validate();
  return scene;
}

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene(ss.str());
}

std::string scene_to_json(const Scene& scene) {
  json j;
  j["name"] = scene.name;
  j["frames"] = scene.frames;
  j["camera"] = {{"focal", scene.camera.focal}, {"cx", scene.camera.cx},         {"cy", scene.camera.cy},
                 {"width", scene.camera.width}, {"height", scene.camera.height}, {"max_range", scene.camera.max_range}};
  j["camera_path"] = trajectory_to_json(scene.camera_path);
  const NoiseSpec& n = scene.noise;
  json switches = json::array();
  for (const IdSwitch& s : n.id_switches)
    switches.push_back({{"step", s.step}, {"from", to_underlying(s.from)}, {"to", to_underlying(s.to)}});
  j["noise"] = {{"depth_slope", n.depth_slope},
                {"depth_offset", n.depth_offset},
                {"mislabel_probability", n.mislabel_probability},
                {"missed_probability", n.missed_probability},
                {"speckle_probability", n.speckle_probability},
                {"transform_translation_sigma", n.transform_translation_sigma},
                {"transform_rotation_sigma", n.transform_rotation_sigma},
                {"id_switches", switches}};
  json objects = json::array();
  for (const SceneObject& o : scene.objects) {
    objects.push_back({{"id", to_underlying(o.id)},
                       {"label", std::string(to_string(o.label))},
                       {"background", o.background},
                       {"movable", o.movable},
                       {"rigid", o.rigid},
                       {"shape", shape_to_json(o.shape)},
                       {"trajectory", trajectory_to_json(o.trajectory)}});
  }
  j["objects"] = objects;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Binary images

namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::filesystem::path& path, const char* field) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw std::runtime_error(path.string() + ": truncated at " + field);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

template <typename Image>
void write_image(const std::filesystem::path& path, const char* magic, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(magic, 4);
  put_le<std::uint32_t>(out, 1);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(img.cols()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(img.rows()));
  for (Eigen::Index v = 0; v < img.rows(); ++v)
    for (Eigen::Index u = 0; u < img.cols(); ++u) put_le(out, img(v, u));
}

template <typename Image>
Image read_image(const std::filesystem::path& path, const char* magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char m[4];
  if (!in.read(m, 4) || std::memcmp(m, magic, 4) != 0)
    throw std::runtime_error(path.string() + ": bad magic, expected " + std::string(magic, 4));
  if (get_le<std::uint32_t>(in, path, "version") != 1) throw std::runtime_error(path.string() + ": unsupported version");
  const auto w = get_le<std::uint32_t>(in, path, "width");
  const auto h = get_le<std::uint32_t>(in, path, "height");
  if (w == 0 || h == 0 || w > 1u << 15 || h > 1u << 15)
    throw std::runtime_error(path.string() + ": implausible dimensions");
  Image img(h, w);
  using Scalar = typename Image::Scalar;
  for (std::uint32_t v = 0; v < h; ++v)
    for (std::uint32_t u = 0; u < w; ++u) img(v, u) = get_le<Scalar>(in, path, "pixel data");
  return img;
}

std::string frame_name(Step k) {
  std::ostringstream s;
  s << std::setw(6) << std::setfill('0') << k;
  return s.str();
}

void write_matrix34(std::ostream& out, const Transform& T) {
  for (int r = 0; r < 3; ++r)
    out << ' ' << T.rotation(r, 0) << ' ' << T.rotation(r, 1) << ' ' << T.rotation(r, 2) << ' ' << T.translation(r);
}

Transform read_matrix34(std::istream& in, const std::filesystem::path& path) {
  Transform T;
  for (int r = 0; r < 3; ++r) {
    if (!(in >> T.rotation(r, 0) >> T.rotation(r, 1) >> T.rotation(r, 2) >> T.translation(r)))
      throw std::runtime_error(path.string() + ": malformed 3x4 matrix");
  }
  return T;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) continue;
    kv[line.substr(0, sp)] = line.substr(sp + 1);
  }
  return kv;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

void write_depth_image(const std::filesystem::path& path, const DepthImage& img) { write_image(path, "DPTH", img); }
DepthImage read_depth_image(const std::filesystem::path& path) { return read_image<DepthImage>(path, "DPTH"); }
void write_instance_image(const std::filesystem::path& path, const InstanceImage& img) {
  write_image(path, "INST", img);
}
InstanceImage read_instance_image(const std::filesystem::path& path) {
  return read_image<InstanceImage>(path, "INST");
}

SequenceWriter::SequenceWriter(std::filesystem::path dir, const Scene& scene, double voxel_size, int log2_dim)
    : dir_(std::move(dir)), scene_(scene), voxel_size_(voxel_size), log2_dim_(log2_dim) {
  std::filesystem::create_directories(dir_ / "frames");
  std::filesystem::create_directories(dir_ / "gt");
  std::ofstream objects(dir_ / "gt" / "objects.csv");
  objects << "id,label,movable,background\n";
  for (const SceneObject& o : scene.objects)
    objects << to_underlying(o.id) << ',' << to_string(o.label) << ',' << (o.movable && !o.background ? 1 : 0) << ','
            << (o.background ? 1 : 0) << '\n';
}

void SequenceWriter::write(const RenderedFrame& rendered, const GroundTruthMap* gt) {
  const MeasurementFrame& f = rendered.frame;
  const std::string name = frame_name(f.step);
  write_depth_image(dir_ / "frames" / (name + ".depth"), f.depth);
  write_instance_image(dir_ / "frames" / (name + ".inst"), f.instances);
  {
    std::ofstream out(dir_ / "frames" / (name + ".pose"));
    out.precision(17);
    out << "step " << f.step << "\npose";
    write_matrix34(out, f.pose.camera_to_map);
    out << '\n';
  }
  {
    std::ofstream out(dir_ / "frames" / (name + ".tf"));
    out.precision(17);
    for (const auto& [id, T] : f.transforms) {
      out << to_underlying(id);
      write_matrix34(out, T);
      out << '\n';
    }
  }
  for (const auto& [id, info] : f.info) labels_.emplace(id, info);
  if (gt) {
    std::ofstream out(dir_ / "gt" / (name + ".gt"));
    out << "voxel_size " << std::setprecision(17) << gt->voxel_size << "\n";
    for (const GroundTruthVoxel& v : gt->voxels)
      out << v.index.x() << ' ' << v.index.y() << ' ' << v.index.z() << ' ' << to_underlying(v.instance) << ' '
          << to_string(v.label) << ' ' << (v.movable ? 1 : 0) << ' ' << (v.background ? 1 : 0) << '\n';
    write_instance_image(dir_ / "gt" / (name + ".ginst"), rendered.true_instances);
  }
  frames_ = std::max(frames_, static_cast<int>(f.step) + 1);
}

void SequenceWriter::finish() {
  std::ofstream seq(dir_ / "sequence.txt");
  seq.precision(17);
  const Camera& c = scene_.camera;
  seq << "# pimap recorded sequence\nversion 1\nframes " << frames_ << "\nwidth " << c.width << "\nheight " << c.height
      << "\nfocal " << c.focal << "\ncx " << c.cx << "\ncy " << c.cy << "\nmax_range " << c.max_range
      << "\nvoxel_size " << voxel_size_ << "\nlog2_dim " << log2_dim_ << "\n";
  std::ofstream labels(dir_ / "labels.csv");
  labels << "id,label,background\n";
  for (const auto& [id, info] : labels_)
    labels << to_underlying(id) << ',' << to_string(info.label) << ',' << (info.background ? 1 : 0) << '\n';
}

SequenceInfo read_sequence_info(const std::filesystem::path& dir) {
  const auto path = dir / "sequence.txt";
  const auto kv = read_key_values(path);
  auto get = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(path.string() + ": missing field '" + key + "'");
    return it->second;
  };
  SequenceInfo info;
  try {
    info.frames = std::stoi(get("frames"));
    info.camera.width = std::stoi(get("width"));
    info.camera.height = std::stoi(get("height"));
    info.camera.focal = std::stod(get("focal"));
    info.camera.cx = std::stod(get("cx"));
    info.camera.cy = std::stod(get("cy"));
    info.camera.max_range = std::stod(get("max_range"));
    if (kv.count("voxel_size")) info.voxel_size = std::stod(get("voxel_size"));
    if (kv.count("log2_dim")) info.log2_dim = std::stoi(get("log2_dim"));
  } catch (const std::invalid_argument&) {
    throw std::runtime_error(path.string() + ": non-numeric field value");
  }
  info.camera.validate();
  for (const auto& row : read_csv(dir / "labels.csv")) {
    if (row.size() < 3) throw std::runtime_error((dir / "labels.csv").string() + ": expected id,label,background");
    info.labels[InstanceId{static_cast<std::uint32_t>(std::stoul(row[0]))}] = {parse_semantic_label(row[1]),
                                                                               row[2] == "1"};
  }
  if (std::filesystem::exists(dir / "gt" / "objects.csv")) {
    for (const auto& row : read_csv(dir / "gt" / "objects.csv")) {
      if (row.size() < 3) continue;
      info.gt_objects[InstanceId{static_cast<std::uint32_t>(std::stoul(row[0]))}] = {parse_semantic_label(row[1]),
                                                                                     row[2] == "1"};
    }
  }
  return info;
}

MeasurementFrame read_frame(const std::filesystem::path& dir, const SequenceInfo& info, Step k) {
  const std::string name = frame_name(k);
  MeasurementFrame f;
  f.step = k;
  f.depth = read_depth_image(dir / "frames" / (name + ".depth"));
  f.instances = read_instance_image(dir / "frames" / (name + ".inst"));
  if (f.depth.rows() != info.camera.height || f.depth.cols() != info.camera.width)
    throw std::runtime_error((dir / "frames" / (name + ".depth")).string() + ": size differs from sequence.txt");
  if (f.instances.rows() != f.depth.rows() || f.instances.cols() != f.depth.cols())
    throw std::runtime_error((dir / "frames" / (name + ".inst")).string() + ": size differs from depth image");
  {
    const auto path = dir / "frames" / (name + ".pose");
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string key;
    Step step = 0;
    if (!(in >> key >> step) || key != "step") throw std::runtime_error(path.string() + ": missing field 'step'");
    if (!(in >> key) || key != "pose") throw std::runtime_error(path.string() + ": missing field 'pose'");
    f.pose = {read_matrix34(in, path), k};
    if (!f.pose.camera_to_map.is_valid(1e-6)) throw std::runtime_error(path.string() + ": pose is not rigid");
  }
  {
    const auto path = dir / "frames" / (name + ".tf");
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::uint32_t id = 0;
    while (in >> id) f.transforms[InstanceId{id}] = read_matrix34(in, path);
    if (!in.eof()) throw std::runtime_error(path.string() + ": malformed instance id");
  }
  for (int v = 0; v < f.instances.rows(); ++v) {
    for (int u = 0; u < f.instances.cols(); ++u) {
      const std::uint32_t id = f.instances(v, u);
      if (!id) continue;
      const InstanceId iid{id};
      if (f.info.count(iid)) continue;
      auto it = info.labels.find(iid);
      f.info[iid] = it == info.labels.end() ? InstanceInfo{} : it->second;
    }
  }
  extract_measurements(f, info.camera);
  return f;
}

std::optional<GroundTruthMap> read_ground_truth(const std::filesystem::path& dir, Step k, double voxel_size) {
  const auto path = dir / "gt" / (frame_name(k) + ".gt");
  std::ifstream in(path);
  if (!in) return std::nullopt;
  GroundTruthMap map;
  map.step = k;
  map.voxel_size = voxel_size;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("voxel_size ", 0) == 0) {
      map.voxel_size = std::stod(line.substr(11));
      continue;
    }
    if (line.empty()) continue;
    std::istringstream s(line);
    GroundTruthVoxel v;
    std::uint32_t id = 0;
    std::string label;
    int movable = 0, background = 0;
    if (!(s >> v.index.x() >> v.index.y() >> v.index.z() >> id >> label >> movable >> background))
      throw std::runtime_error(path.string() + ": malformed voxel record");
    v.instance = InstanceId{id};
    v.label = parse_semantic_label(label);
    v.movable = movable != 0;
    v.background = background != 0;
    map.voxels.push_back(v);
  }
  std::sort(map.voxels.begin(), map.voxels.end(),
            [](const GroundTruthVoxel& a, const GroundTruthVoxel& b) { return VoxelIndexLess{}(a.index, b.index); });
  return map;
}

std::optional<InstanceImage> read_true_instances(const std::filesystem::path& dir, Step k) {
  const auto path = dir / "gt" / (frame_name(k) + ".ginst");
  if (!std::filesystem::exists(path)) return std::nullopt;
  return read_instance_image(path);
}

void simulate_to_directory(const Scene& scene, const std::filesystem::path& dir, std::uint64_t seed, double voxel_size,
                           int log2_dim) {
  scene.validate();
  Rng rng(seed);
  SequenceWriter writer(dir, scene, voxel_size, log2_dim);
  GroundTruthBuilder gt(scene, voxel_size, log2_dim);
  for (Step k = 0; k < scene.frames; ++k) {
    const RenderedFrame r = render_frame(scene, k, rng);
    gt.observe(k, r.true_depth, r.true_instances);
    const GroundTruthMap map = gt.map_at(k);
    writer.write(r, &map);
  }
  writer.finish();
}

// ---------------------------------------------------------------------------
// Demo scenes. Map frame: x forward, y left, z up; the ground top is at
// z = 0.1 so that faces sit mid-voxel for 0.2 m voxels.

namespace demo {
namespace {

SceneObject ground(InstanceId id, double size = 30.0) {
  SceneObject g;
  g.id = id;
  g.label = SemanticLabel::kGround;
  g.background = true;
  g.movable = false;
  g.shape = Shape::box(Vec3(size, size, 0.2));
  g.trajectory = Trajectory::fixed(Transform::identity());
  return g;
}

SceneObject static_box(InstanceId id, SemanticLabel label, const Vec3& size, const Vec3& center, bool background = false) {
  SceneObject o;
  o.id = id;
  o.label = label;
  o.background = background;
  o.movable = !background;
  o.shape = Shape::box(size);
  o.trajectory = Trajectory::fixed(Transform::from_translation(center));
  return o;
}

}  // namespace

Scene two_objects() {
  Scene s;
  s.name = "two_objects";
  s.frames = 20;
  s.camera = {120.0, 80.0, 60.0, 160, 120, 10.0};
  s.camera_path.keys = {camera_key(0, Vec3(0.1, 0.1, 1.5), Vec3(4.1, 0.1, 0.5))};
  s.objects.push_back(ground(InstanceId{1}));
  s.objects.push_back(static_box(InstanceId{2}, SemanticLabel::kChair, Vec3(0.6, 0.6, 1.0), Vec3(4.4, 1.2, 0.6)));
  SceneObject car = static_box(InstanceId{3}, SemanticLabel::kCar, Vec3(1.0, 1.6, 1.0), Vec3(5.6, -2.0, 0.6));
  car.trajectory.keys = {{0, Transform::from_translation(Vec3(5.6, -2.0, 0.6))},
                         {19, Transform::from_translation(Vec3(5.6, 1.8, 0.6))}};
  s.objects.push_back(car);
  return s;
}

Scene static_objects(int frames) {
  Scene s;
  s.name = "static_objects";
  s.frames = frames;
  // Beyond 7.5 m consecutive image rows land more than a voxel apart on the
  // ground, so the sampled surface would skip whole voxel rows.
  s.camera = {240.0, 160.0, 120.0, 320, 240, 7.5};
  s.camera_path.keys = {camera_key(0, Vec3(0.1, 0.1, 1.3), Vec3(5.1, 0.1, 0.7))};
  s.objects.push_back(ground(InstanceId{1}));
  s.objects.push_back(static_box(InstanceId{2}, SemanticLabel::kCar, Vec3(1.0, 1.8, 1.0), Vec3(4.6, -1.4, 0.6)));
  s.objects.push_back(static_box(InstanceId{3}, SemanticLabel::kChair, Vec3(0.6, 0.6, 0.8), Vec3(3.4, 0.6, 0.5)));
  s.objects.push_back(static_box(InstanceId{4}, SemanticLabel::kTruck, Vec3(1.2, 1.6, 1.6), Vec3(6.7, 1.9, 0.9)));
  s.objects.push_back(static_box(InstanceId{5}, SemanticLabel::kPole, Vec3(0.2, 0.2, 2.0), Vec3(4.0, 2.0, 1.1)));
  s.objects.push_back(static_box(InstanceId{6}, SemanticLabel::kPedestrian, Vec3(0.4, 0.6, 1.6), Vec3(5.3, 0.2, 0.9)));
  return s;
}

Scene moving_box(int frames, double voxel_size) {
  Scene s;
  s.name = "moving_box";
  s.frames = frames;
  s.camera = {120.0, 80.0, 60.0, 160, 120, 10.0};
  s.camera_path.keys = {camera_key(0, Vec3(0.1, 0.1, 1.1), Vec3(4.1, 0.1, 0.7))};
  s.objects.push_back(ground(InstanceId{1}));
  s.objects.push_back(
      static_box(InstanceId{2}, SemanticLabel::kWall, Vec3(0.2, 12.0, 3.0), Vec3(7.2, 0.0, 1.6), true));
  SceneObject box = static_box(InstanceId{3}, SemanticLabel::kCar, Vec3(1.0, 1.0, 1.0), Vec3(3.6, -2.4, 0.6));
  const Step last = std::max(1, frames - 1);
  box.trajectory.keys = {{0, Transform::from_translation(Vec3(3.6, -2.4, 0.6))},
                         {last, Transform::from_translation(Vec3(3.6, -2.4 + voxel_size * last, 0.6))}};
  s.objects.push_back(box);
  return s;
}

}  // namespace demo

}  // namespace pimap
