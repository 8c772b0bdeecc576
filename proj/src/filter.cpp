#include "pimap/filter.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace pimap {

double id_transition(InstanceId z_id, InstanceId p_id, const FilterParams& params) {
  return z_id == p_id ? 1.0 : params.p_transition;
}

double forgetting(Step dk, const FilterParams& params) {
  if (dk > params.forget_horizon) return 0.0;
  return std::exp(-static_cast<double>(dk) / params.forget_speed);
}

double gaussian3(const Vec3& z, const Vec3& x, double sigma) {
  const double s2 = sigma * sigma;
  return std::pow(2.0 * std::numbers::pi * s2, -1.5) * std::exp(-(z - x).squaredNorm() / (2.0 * s2));
}

PredictReport predict(VoxelGrid& grid, InstanceRegistry& registry, const MeasurementFrame& frame,
                      const FilterParams& params, Step k, Rng& rng) {
  PredictReport report;
  std::map<InstanceId, Transform> moves;
  const bool noisy = (params.process_noise.array() > 0).any();

  for (auto& [id, record] : registry) {
    if (record.background) continue;
    Transform rel = Transform::identity();
    if (auto it = frame.transforms.find(id); it != frame.transforms.end()) {
      rel = it->second;
    } else if (!frame.info.count(id)) {
      if (record.history.size() >= 2) {
        const Transform& last = record.history.back().pose;
        const Transform& prev = record.history[record.history.size() - 2].pose;
        rel = last * prev.inverse();
        report.extrapolated.push_back(id);
      } else if (!record.particles.empty()) {
        report.missing_history.push_back(id);
      }
    }
    const Transform base = record.history.empty() ? Transform::identity() : record.history.back().pose;
    registry.push_pose(id, rel * base, k);
    const bool identity = rel.rotation.isIdentity(0.0) && rel.translation.isZero(0.0);
    if (!identity || noisy) moves.emplace(id, rel);
  }

  std::function<Vec3(const Vec3&)> perturb;
  if (noisy) {
    const Vec3 sd = params.process_noise.cwiseSqrt();
    perturb = [&rng, sd](const Vec3&) {
      std::normal_distribution<double> n(0.0, 1.0);
      const double a = n(rng), b = n(rng), c = n(rng);
      return Vec3(sd.x() * a, sd.y() * b, sd.z() * c);
    };
  }
  const RelocateResult moved = relocate_particles(grid, moves, rng, k, perturb);
  report.moved = moved.moved;
  report.discarded = moved.discarded;

  if (params.p_survive != 1.0) {
    grid.for_each_cell_mut([&](CellIndex, std::span<Particle> slots) {
      for (Particle& p : slots)
        if (p.valid) p.weight *= params.p_survive;
    });
  }
  return report;
}

UpdateReport update(VoxelGrid& grid, const UpdateIndicesImage& indices, const MeasurementFrame& frame,
                    const Camera& cam, const FilterParams& params, Step k) {
  UpdateReport report;
  const auto entries = indices.entries();
  const std::size_t n = entries.size();
  report.visible = n;
  report.measurements = frame.points.size();
  if (n == 0) return report;

  struct Visible {
    Vec3 position;
    double weight;
    InstanceId instance;
    double cross_factor;  // ID-transition times forgetting for foreign measurements
  };
  std::vector<Visible> vis(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Particle& p = grid.particle(entries[i].ref);
    double cross = 0.0;
    if (params.mode == UpdateMode::kCollective && params.p_transition > 0.0) {
      cross = params.p_transition;
      if (params.forgetting) cross *= forgetting(k - p.last_match_step, params);
    }
    vis[i] = {p.position, p.weight, p.instance, cross};
  }

  struct Prepared {
    ActivationBox box;
    double norm;
    double inv_two_var;
  };
  std::vector<Prepared> prep(frame.points.size());
  for (std::size_t m = 0; m < frame.points.size(); ++m) {
    const MeasurementPoint& z = frame.points[m];
    const double sigma = params.sigma(z.depth);
    const double l = activation_radius(sigma, params.activation_epsilon);
    prep[m].box = activation_box(cam, z.camera_point, l, params.bbox_dilation);
    prep[m].norm = std::pow(2.0 * std::numbers::pi * sigma * sigma, -1.5);
    prep[m].inv_two_var = 1.0 / (2.0 * sigma * sigma);
    if (prep[m].box.full_image) ++report.full_image_boxes;
  }

  // Visits every (measurement, visible particle) pair in the measurement's box
  // with a nonzero likelihood: f(entry index, g, gaussian).
  auto for_each_pair = [&](std::size_t m, auto&& f) {
    const MeasurementPoint& z = frame.points[m];
    const Prepared& pr = prep[m];
    if (pr.box.empty()) return;
    for (int v = pr.box.v_min; v <= pr.box.v_max; ++v) {
      const std::size_t begin = indices.offset(pr.box.u_min, v);
      const std::size_t end = indices.offset(pr.box.u_max, v) + indices.at(pr.box.u_max, v).size();
      for (std::size_t i = begin; i < end; ++i) {
        const Visible& x = vis[i];
        const double factor = x.instance == z.instance ? 1.0 : x.cross_factor;
        if (factor == 0.0) continue;
        const double gauss = pr.norm * std::exp(-(z.position - x.position).squaredNorm() * pr.inv_two_var);
        f(i, factor * gauss, gauss);
      }
    }
  };

  std::vector<double> C(frame.points.size(), 0.0);
  std::vector<char> matched(n, 0);
  for (std::size_t m = 0; m < frame.points.size(); ++m) {
    double c = 0.0;
    const double floor = params.match_floor * prep[m].norm;
    const InstanceId zid = frame.points[m].instance;
    for_each_pair(m, [&](std::size_t i, double g, double gauss) {
      c += params.p_detect * vis[i].weight * g;
      if (vis[i].instance == zid && gauss >= floor) matched[i] = 1;
    });
    C[m] = c;
  }

  std::vector<double> acc(n, 0.0);
  for (std::size_t m = 0; m < frame.points.size(); ++m) {
    const double denom = params.clutter + C[m];
    if (!(denom > 0.0)) continue;
    for_each_pair(m, [&](std::size_t i, double g, double) { acc[i] += params.p_detect * g / denom; });
  }

  for (std::size_t i = 0; i < n; ++i) {
    Particle& p = grid.particle(entries[i].ref);
    p.weight *= 1.0 - params.p_detect + acc[i];
    if (matched[i]) {
      p.last_match_step = k;
      p.speculative = false;
      ++report.matched;
    }
  }
  return report;
}

BirthReport birth(VoxelGrid& grid, const MeasurementFrame& frame, const std::vector<TemplateBirth>& templates,
                  const FilterParams& params, Step k, Rng& rng) {
  BirthReport report;
  const int lb = params.newborns_per_measurement;

  std::map<InstanceId, std::size_t> per_instance;
  for (const MeasurementPoint& z : frame.points) ++per_instance[z.instance];

  // Template instances share one diluted per-particle weight.
  std::map<InstanceId, double> weight_of;
  for (const TemplateBirth& t : templates) {
    const auto mi = static_cast<double>(per_instance[t.instance]);
    const double vb = params.newborn_weight * mi * lb;
    const double denom = mi * lb + static_cast<double>(t.positions.size());
    weight_of[t.instance] = denom > 0 ? vb / denom : 0.0;
  }
  auto weight_for = [&](InstanceId id) {
    auto it = weight_of.find(id);
    return it == weight_of.end() ? params.newborn_weight : it->second;
  };

  auto place = [&](const Particle& p) {
    const InsertOutcome outcome = grid.insert(p, rng, k);
    if (outcome == InsertOutcome::kAccepted || outcome == InsertOutcome::kResampledThenAccepted) return true;
    ++report.discarded;
    return false;
  };

  // With templates the whole birth set is placed in random order, so full
  // cells keep a mix of both sources.
  const bool mix = !templates.empty();
  std::vector<Particle> pending;
  std::vector<std::size_t> order(frame.points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::normal_distribution<double> unit(0.0, 1.0);
  for (int round = 0; round < lb; ++round) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t m : order) {
      const MeasurementPoint& z = frame.points[m];
      const double sigma = params.sigma(z.depth);
      Particle p;
      const double a = unit(rng), b = unit(rng), c = unit(rng);
      p.position = z.position + sigma * Vec3(a, b, c);
      p.weight = weight_for(z.instance);
      p.instance = z.instance;
      p.last_match_step = k;
      p.born_step = k;
      if (mix)
        pending.push_back(p);
      else if (place(p))
        ++report.born;
    }
  }

  for (const TemplateBirth& t : templates) {
    const double w = weight_for(t.instance);
    for (const Vec3& pos : t.positions) {
      Particle p;
      p.position = pos;
      p.weight = w;
      p.instance = t.instance;
      p.last_match_step = k;
      p.born_step = k;
      p.speculative = true;
      pending.push_back(p);
    }
  }
  std::shuffle(pending.begin(), pending.end(), rng);
  for (const Particle& p : pending)
    if (place(p)) ++(p.speculative ? report.template_born : report.born);
  return report;
}

std::string_view to_string(VoxelStatus status) {
  switch (status) {
    case VoxelStatus::kOccupied:
      return "occupied";
    case VoxelStatus::kSpeculative:
      return "speculative";
    default:
      return "free";
  }
}

const LabeledVoxel* LabeledVoxelMap::find(const VoxelIndex& index) const {
  auto it = std::lower_bound(voxels.begin(), voxels.end(), index,
                             [](const LabeledVoxel& v, const VoxelIndex& i) { return VoxelIndexLess{}(v.index, i); });
  if (it == voxels.end() || it->index != index) return nullptr;
  return &*it;
}

std::vector<VoxelIndex> LabeledVoxelMap::occupied() const {
  std::vector<VoxelIndex> out;
  for (const LabeledVoxel& v : voxels)
    if (v.status == VoxelStatus::kOccupied) out.push_back(v.index);
  return out;
}

std::size_t LabeledVoxelMap::count(VoxelStatus status) const {
  return static_cast<std::size_t>(
      std::count_if(voxels.begin(), voxels.end(), [&](const LabeledVoxel& v) { return v.status == status; }));
}

LabeledVoxelMap estimate_map(const VoxelGrid& grid, const InstanceRegistry& registry,
                             const FilterParams& params, Step k) {
  LabeledVoxelMap map;
  map.voxel_size = grid.voxel_size();
  map.step = k;
  std::map<InstanceId, double> by_id;
  grid.for_each_cell([&](CellIndex cell, std::span<const Particle> slots) {
    by_id.clear();
    double total = 0.0;
    bool speculative = false;
    for (const Particle& p : slots) {
      if (!p.valid) continue;
      total += p.weight;
      by_id[p.instance] += p.weight;
      speculative = speculative || p.speculative;
    }
    if (by_id.empty()) return;
    const bool occupied = total >= params.occupancy_threshold;
    if (!occupied && !speculative) return;
    InstanceId best = by_id.begin()->first;
    double best_w = by_id.begin()->second;
    for (const auto& [id, w] : by_id) {
      if (w > best_w) {
        best = id;
        best_w = w;
      }
    }
    LabeledVoxel v;
    v.index = grid.global_index(cell);
    v.status = occupied ? VoxelStatus::kOccupied : VoxelStatus::kSpeculative;
    v.instance = best;
    v.label = registry.label_of(best);
    v.weight = total;
    map.voxels.push_back(v);
  });
  std::sort(map.voxels.begin(), map.voxels.end(),
            [](const LabeledVoxel& a, const LabeledVoxel& b) { return VoxelIndexLess{}(a.index, b.index); });
  return map;
}

namespace {

std::uint32_t external_id(InstanceId id) { return id == kUnlabeledInstance ? kUnlabeledPixel : to_underlying(id); }

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw std::runtime_error("map export truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string header_value(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line) || line.rfind(key + " ", 0) != 0)
    throw std::runtime_error("map export header expected '" + key + "'");
  return line.substr(key.size() + 1);
}

}  // namespace

void write_map_text(const LabeledVoxelMap& map, std::ostream& out) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4);
  for (const LabeledVoxel& v : map.voxels) {
    const Vec3 c = voxel_center(v.index, map.voxel_size);
    s << c.x() << ' ' << c.y() << ' ' << c.z() << ' ' << to_string(v.status) << ' ' << external_id(v.instance)
      << ' ' << to_string(v.label) << '\n';
  }
  out << s.str();
}

void write_map_binary(const LabeledVoxelMap& map, std::ostream& out) {
  std::ostringstream h;
  h.precision(17);
  h << "PIMAP-MAP\nversion 1\nvoxel_size " << map.voxel_size << "\nstep " << map.step << "\nrecords "
    << map.voxels.size() << "\n";
  out << h.str();
  for (const LabeledVoxel& v : map.voxels) {
    put_le<std::int32_t>(out, v.index.x());
    put_le<std::int32_t>(out, v.index.y());
    put_le<std::int32_t>(out, v.index.z());
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(v.status));
    put_le<std::uint32_t>(out, to_underlying(v.instance));
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(v.label));
    put_le<double>(out, v.weight);
  }
}

LabeledVoxelMap read_map_binary(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "PIMAP-MAP") throw std::runtime_error("not a map export");
  if (header_value(in, "version") != "1") throw std::runtime_error("unsupported map export version");
  LabeledVoxelMap map;
  map.voxel_size = std::stod(header_value(in, "voxel_size"));
  map.step = std::stoll(header_value(in, "step"));
  const auto n = std::stoull(header_value(in, "records"));
  map.voxels.resize(n);
  for (LabeledVoxel& v : map.voxels) {
    v.index.x() = get_le<std::int32_t>(in);
    v.index.y() = get_le<std::int32_t>(in);
    v.index.z() = get_le<std::int32_t>(in);
    v.status = static_cast<VoxelStatus>(get_le<std::uint8_t>(in));
    v.instance = InstanceId{get_le<std::uint32_t>(in)};
    v.label = static_cast<SemanticLabel>(get_le<std::uint16_t>(in));
    v.weight = get_le<double>(in);
  }
  return map;
}

}  // namespace pimap
