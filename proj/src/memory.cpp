#include "pimap/memory.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <Eigen/Geometry>

namespace pimap {

void MemoryParams::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(completeness_threshold >= 0 && completeness_threshold <= 1, "completeness_threshold must be in [0, 1]");
  require(completeness_rays > 0, "completeness_rays must be positive");
  require(score_threshold >= -1 && score_threshold <= 1, "score_threshold must be in [-1, 1]");
  require(ransac_iterations > 0, "ransac_iterations must be positive");
  require(icp_iterations >= 0, "icp_iterations must be nonnegative");
}

void TemplateLibrary::add(Template t) { by_label_[t.label].push_back(std::move(t)); }

const std::vector<Template>& TemplateLibrary::templates(SemanticLabel label) const {
  static const std::vector<Template> kNone;
  auto it = by_label_.find(label);
  return it == by_label_.end() ? kNone : it->second;
}

std::size_t TemplateLibrary::size() const {
  std::size_t n = 0;
  for (const auto& [label, list] : by_label_) n += list.size();
  return n;
}

void write_template(const Template& t, std::ostream& out) {
  std::ostringstream s;
  s.precision(17);
  s << "PIMAP-TEMPLATE\nversion 1\nlabel " << to_string(t.label) << "\ncount " << t.points.size() << "\nanchor "
    << t.anchor.x() << ' ' << t.anchor.y() << ' ' << t.anchor.z() << "\nsource " << to_underlying(t.source)
    << "\nstep " << t.created << "\n";
  for (std::size_t i = 0; i < t.points.size(); ++i)
    s << t.points[i].x() << ' ' << t.points[i].y() << ' ' << t.points[i].z() << ' ' << t.weights[i] << '\n';
  out << s.str();
}

namespace {

std::string field(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line) || line.rfind(key + " ", 0) != 0)
    throw std::runtime_error("template header expected '" + key + "'");
  return line.substr(key.size() + 1);
}

}  // namespace

Template read_template(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "PIMAP-TEMPLATE") throw std::runtime_error("not a template file");
  if (field(in, "version") != "1") throw std::runtime_error("unsupported template version");
  Template t;
  t.label = parse_semantic_label(field(in, "label"));
  const auto n = std::stoull(field(in, "count"));
  std::istringstream a(field(in, "anchor"));
  a >> t.anchor.x() >> t.anchor.y() >> t.anchor.z();
  t.source = InstanceId{static_cast<std::uint32_t>(std::stoul(field(in, "source")))};
  t.created = std::stoll(field(in, "step"));
  t.points.resize(n);
  t.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(in >> t.points[i].x() >> t.points[i].y() >> t.points[i].z() >> t.weights[i]))
      throw std::runtime_error("template body truncated at record " + std::to_string(i));
  }
  return t;
}

void TemplateLibrary::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [label, list] : by_label_) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      std::ofstream out(dir / ("template_" + std::string(to_string(label)) + "_" + std::to_string(i) + ".tpl"));
      if (!out) throw std::runtime_error("cannot write template into " + dir.string());
      write_template(list[i], out);
    }
  }
}

TemplateLibrary TemplateLibrary::load(const std::filesystem::path& dir) {
  TemplateLibrary lib;
  if (!std::filesystem::is_directory(dir)) return lib;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ".tpl") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    lib.add(read_template(in));
  }
  return lib;
}

std::vector<Vec3> fibonacci_directions(int count) {
  std::vector<Vec3> out;
  out.reserve(count);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / count;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    out.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
  }
  return out;
}

double completeness(const std::vector<VoxelIndex>& voxels, double voxel_size, int rays) {
  if (voxels.empty() || rays <= 0) return 0.0;
  std::unordered_set<VoxelIndex, VoxelIndexHash> set(voxels.begin(), voxels.end());
  VoxelIndex lo = voxels.front(), hi = voxels.front();
  Vec3 center = Vec3::Zero();
  for (const VoxelIndex& v : voxels) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
    center += voxel_center(v, voxel_size);
  }
  center /= static_cast<double>(voxels.size());

  int hits = 0;
  for (const Vec3& dir : fibonacci_directions(rays)) {
    VoxelRay ray(center, dir, voxel_size);
    for (;;) {
      ray.next();
      const VoxelIndex& v = ray.voxel();
      if ((v.array() < lo.array()).any() || (v.array() > hi.array()).any()) break;
      if (set.count(v)) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / rays;
}

MatchEvidence make_evidence(const std::vector<Vec3>& points, double voxel_size) {
  MatchEvidence ev;
  ev.voxel_size = voxel_size;
  ev.points = points;
  if (points.empty()) return ev;
  ev.box_min = voxel_of(points.front(), voxel_size);
  ev.box_max = ev.box_min;
  for (const Vec3& p : points) {
    const VoxelIndex v = voxel_of(p, voxel_size);
    ev.box_min = ev.box_min.cwiseMin(v);
    ev.box_max = ev.box_max.cwiseMax(v);
    ev.h[v] = 1;
  }
  ev.informative = ev.h.size();
  return ev;
}

MatchEvidence make_evidence(const std::vector<Vec3>& points, const Vec3& sensor, double voxel_size) {
  MatchEvidence ev = make_evidence(points, voxel_size);
  if (points.empty()) return ev;
  const Vec3 lo = ev.box_min.cast<double>() * voxel_size;
  const Vec3 hi = (ev.box_max + VoxelIndex::Ones()).cast<double>() * voxel_size;
  auto inside = [&](const VoxelIndex& v) {
    return (v.array() >= ev.box_min.array()).all() && (v.array() <= ev.box_max.array()).all();
  };
  for (const Vec3& p : points) {
    const Vec3 delta = p - sensor;
    const double length = delta.norm();
    if (!(length > 0)) continue;
    const Vec3 dir = delta / length;
    // Enter the region first; the stretch before it cannot contribute.
    double t0 = 0.0;
    for (int a = 0; a < 3; ++a) {
      if (dir(a) == 0.0) continue;
      const double ta = (lo(a) - sensor(a)) / dir(a);
      const double tb = (hi(a) - sensor(a)) / dir(a);
      t0 = std::max(t0, std::min(ta, tb));
    }
    if (t0 >= length) continue;
    const VoxelIndex target = voxel_of(p, voxel_size);
    VoxelRay ray(sensor + t0 * dir, dir, voxel_size);
    while (ray.entry_t() + t0 < length && ray.voxel() != target) {
      const VoxelIndex& v = ray.voxel();
      if (inside(v)) {
        auto [it, inserted] = ev.h.try_emplace(v, -1);
        (void)it;
        if (inserted) ++ev.informative;
      }
      ray.next();
    }
  }
  return ev;
}

double similarity(const MatchEvidence& evidence, const Template& tmpl, const Transform& T) {
  if (evidence.points.empty()) throw std::invalid_argument("similarity needs at least one measured point");
  if (evidence.informative == 0) return 0.0;
  std::unordered_map<VoxelIndex, double, VoxelIndexHash> mass;
  for (std::size_t i = 0; i < tmpl.points.size(); ++i) {
    const VoxelIndex v = voxel_of(T * tmpl.points[i], evidence.voxel_size);
    if ((v.array() < evidence.box_min.array()).any() || (v.array() > evidence.box_max.array()).any()) continue;
    mass[v] += tmpl.weights[i];
  }
  double sum = 0.0;
  for (const auto& [v, m] : mass) {
    auto it = evidence.h.find(v);
    if (it == evidence.h.end()) continue;
    sum += std::min(m, 1.0) * it->second;
  }
  return sum / static_cast<double>(evidence.informative);
}

namespace {

std::vector<Vec3> voxel_centroids(const std::vector<Vec3>& points, double voxel_size) {
  std::map<VoxelIndex, std::pair<Vec3, int>, VoxelIndexLess> cells;
  for (const Vec3& p : points) {
    auto& c = cells[voxel_of(p, voxel_size)];
    if (c.second == 0) c.first.setZero();
    c.first += p;
    ++c.second;
  }
  std::vector<Vec3> out;
  out.reserve(cells.size());
  for (const auto& [v, c] : cells) out.push_back(c.first / c.second);
  return out;
}

Transform rigid_fit(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  Eigen::Matrix3Xd a(3, src.size()), b(3, dst.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    a.col(static_cast<Eigen::Index>(i)) = src[i];
    b.col(static_cast<Eigen::Index>(i)) = dst[i];
  }
  const Eigen::Matrix4d m = Eigen::umeyama(a, b, false);
  Transform T;
  T.rotation = m.topLeftCorner<3, 3>();
  T.translation = m.topRightCorner<3, 1>();
  return T;
}

class PointHash {
 public:
  PointHash(const std::vector<Vec3>& pts, double cell) : pts_(pts), cell_(cell) {
    for (std::size_t i = 0; i < pts.size(); ++i) grid_[voxel_of(pts[i], cell)].push_back(static_cast<int>(i));
  }
  int nearest(const Vec3& q, double radius) const {
    const VoxelIndex c = voxel_of(q, cell_);
    const int ring = std::max(1, static_cast<int>(std::ceil(radius / cell_ - 1e-9)));
    int best = -1;
    double best_d = radius * radius;
    for (int dz = -ring; dz <= ring; ++dz)
      for (int dy = -ring; dy <= ring; ++dy)
        for (int dx = -ring; dx <= ring; ++dx) {
          auto it = grid_.find(c + VoxelIndex(dx, dy, dz));
          if (it == grid_.end()) continue;
          for (int i : it->second) {
            const double d = (pts_[i] - q).squaredNorm();
            if (d < best_d) {
              best_d = d;
              best = i;
            }
          }
        }
    return best;
  }

 private:
  const std::vector<Vec3>& pts_;
  double cell_;
  std::unordered_map<VoxelIndex, std::vector<int>, VoxelIndexHash> grid_;
};

constexpr std::size_t kRefinedHypotheses = 16;

}  // namespace

std::optional<MatchResult> match(const MatchEvidence& evidence, const TemplateLibrary& library, SemanticLabel label,
                                 const MemoryParams& params, Rng& rng) {
  const auto& candidates = library.templates(label);
  if (candidates.empty() || evidence.points.empty()) return std::nullopt;
  const double l = evidence.voxel_size;
  const std::vector<Vec3> meas = voxel_centroids(evidence.points, l);
  if (meas.size() < 3) return std::nullopt;

  std::vector<MatchResult> hypotheses;
  double top = -1.0;
  std::uniform_int_distribution<std::size_t> pick_m(0, meas.size() - 1);

  for (std::size_t ti = 0; ti < candidates.size() && top < params.early_exit_score; ++ti) {
    const Template& tmpl = candidates[ti];
    const std::vector<Vec3> model = voxel_centroids(tmpl.points, l);
    if (model.size() < 3) continue;
    const PointHash hash(model, 1.5 * l);
    std::uniform_int_distribution<std::size_t> pick_t(0, model.size() - 1);
    const double tol = l;

    for (int it = 0; it < params.ransac_iterations; ++it) {
      std::size_t m0 = 0, m1 = 0, m2 = 0;
      for (int attempt = 0; attempt < 20; ++attempt) {
        m0 = pick_m(rng);
        m1 = pick_m(rng);
        m2 = pick_m(rng);
        if (m0 == m1 || m1 == m2 || m0 == m2) continue;
        const double spread = 2.0 * l;
        if ((meas[m0] - meas[m1]).norm() >= spread && (meas[m0] - meas[m2]).norm() >= spread &&
            (meas[m1] - meas[m2]).norm() >= spread)
          break;
      }
      if (m0 == m1 || m1 == m2 || m0 == m2) continue;
      const double d01 = (meas[m0] - meas[m1]).norm();
      const double d02 = (meas[m0] - meas[m2]).norm();
      const double d12 = (meas[m1] - meas[m2]).norm();

      // Every consistent template triple found for this sample is scored.
      std::vector<std::size_t> cand;
      for (int attempt = 0; attempt < 10 && top < params.early_exit_score; ++attempt) {
        const std::size_t t0 = pick_t(rng);
        cand.clear();
        for (std::size_t j = 0; j < model.size(); ++j)
          if (std::abs((model[j] - model[t0]).norm() - d01) <= tol) cand.push_back(j);
        if (cand.empty()) continue;
        const std::size_t t1 = cand[std::uniform_int_distribution<std::size_t>(0, cand.size() - 1)(rng)];
        cand.clear();
        for (std::size_t j = 0; j < model.size(); ++j) {
          if (j == t0 || j == t1) continue;
          if (std::abs((model[j] - model[t0]).norm() - d02) <= tol &&
              std::abs((model[j] - model[t1]).norm() - d12) <= tol)
            cand.push_back(j);
        }
        if (cand.empty()) continue;
        const std::size_t t2 = cand[std::uniform_int_distribution<std::size_t>(0, cand.size() - 1)(rng)];

        Transform T = rigid_fit({model[t0], model[t1], model[t2]}, {meas[m0], meas[m1], meas[m2]});
        for (int icp = 0; icp < params.icp_iterations; ++icp) {
          const Transform inv = T.inverse();
          std::vector<Vec3> src, dst;
          for (const Vec3& q : meas) {
            const int j = hash.nearest(inv * q, 1.5 * l);
            if (j < 0) continue;
            src.push_back(model[j]);
            dst.push_back(q);
          }
          if (src.size() < 3) break;
          T = rigid_fit(src, dst);
        }

        const double score = similarity(evidence, tmpl, T);
        if (score >= params.score_threshold) hypotheses.push_back(MatchResult{label, ti, T, score});
        top = std::max(top, score);
      }
      if (top >= params.early_exit_score) break;
    }
  }
  if (hypotheses.empty()) return std::nullopt;

  // The voxel score is flat across poses that cover the same coarse voxels, so
  // hypotheses are ranked by how many measurement points land near template
  // particles, and the best of them are refined by point-level ICP with a
  // shrinking radius and ranked again at a tighter radius.
  const std::size_t stride = std::max<std::size_t>(1, evidence.points.size() / 2000);
  std::map<std::size_t, PointHash> fine_hashes;
  auto fine_hash = [&](std::size_t index) -> const PointHash& {
    return fine_hashes.try_emplace(index, candidates[index].points, 0.5 * l).first->second;
  };
  auto inlier_fraction = [&](const MatchResult& h, double radius) {
    const PointHash& fine = fine_hash(h.template_index);
    const Transform inv = h.transform.inverse();
    std::size_t inliers = 0, total = 0;
    for (std::size_t i = 0; i < evidence.points.size(); i += stride, ++total)
      if (fine.nearest(inv * evidence.points[i], radius) >= 0) ++inliers;
    return static_cast<double>(inliers) / static_cast<double>(total);
  };
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) order.emplace_back(-inlier_fraction(hypotheses[i], 0.5 * l), i);
  std::stable_sort(order.begin(), order.end());
  if (order.size() > kRefinedHypotheses) order.resize(kRefinedHypotheses);
  std::vector<MatchResult> shortlist;
  for (const auto& [fit, i] : order) shortlist.push_back(hypotheses[i]);
  hypotheses = std::move(shortlist);

  std::optional<MatchResult> best;
  double best_fit = -1.0;
  for (MatchResult& h : hypotheses) {
    const Template& tmpl = candidates[h.template_index];
    const PointHash& fine = fine_hash(h.template_index);
    Transform T = h.transform;
    double radius = l;
    for (int it = 0; it < 4 * params.icp_iterations; ++it, radius = std::max(0.25 * l, 0.7 * radius)) {
      const Transform inv = T.inverse();
      std::vector<Vec3> src, dst;
      for (std::size_t i = 0; i < evidence.points.size(); i += stride) {
        const int j = fine.nearest(inv * evidence.points[i], radius);
        if (j < 0) continue;
        src.push_back(tmpl.points[j]);
        dst.push_back(evidence.points[i]);
      }
      if (src.size() < 3) break;
      T = rigid_fit(src, dst);
    }
    const double refined = similarity(evidence, tmpl, T);
    if (refined >= params.score_threshold) {
      h.transform = T;
      h.score = refined;
    }
    const double fit = inlier_fraction(h, 0.25 * l);
    if (fit > best_fit) {
      best_fit = fit;
      best = h;
    }
  }
  return best;
}

std::vector<VoxelIndex> instance_voxels(const VoxelGrid& grid, InstanceId id, double occupancy_threshold) {
  std::vector<VoxelIndex> out;
  grid.for_each_cell([&](CellIndex cell, std::span<const Particle> slots) {
    std::map<InstanceId, double> by_id;
    double total = 0.0;
    for (const Particle& p : slots) {
      if (!p.valid) continue;
      total += p.weight;
      by_id[p.instance] += p.weight;
    }
    if (by_id.empty() || total < occupancy_threshold) return;
    auto best = by_id.begin();
    for (auto it = by_id.begin(); it != by_id.end(); ++it)
      if (it->second > best->second) best = it;
    if (best->first == id) out.push_back(grid.global_index(cell));
  });
  std::sort(out.begin(), out.end(), VoxelIndexLess{});
  return out;
}

std::string_view to_string(StoreOutcome outcome) {
  switch (outcome) {
    case StoreOutcome::kStored:
      return "stored";
    case StoreOutcome::kNotComplete:
      return "not-complete";
    case StoreOutcome::kPruned:
      return "pruned";
    case StoreOutcome::kUnknownInstance:
      return "unknown-instance";
    default:
      return "not-eligible";
  }
}

StoreOutcome maybe_store_template(const VoxelGrid& grid, const InstanceRegistry& registry, InstanceId id,
                                  const FilterParams& filter, const MemoryParams& params, TemplateLibrary& library,
                                  Step k, double* completeness_out) {
  const InstanceRecord* record = registry.find(id);
  if (!record) return StoreOutcome::kUnknownInstance;
  if (record->background || record->label == SemanticLabel::kUnlabeled) return StoreOutcome::kNotEligible;
  const double l = grid.voxel_size();
  const std::vector<VoxelIndex> voxels = instance_voxels(grid, id, filter.occupancy_threshold);
  const double c = completeness(voxels, l, params.completeness_rays);
  if (completeness_out) *completeness_out = c;
  if (voxels.empty() || !(c > params.completeness_threshold)) return StoreOutcome::kNotComplete;

  Template t;
  t.label = record->label;
  t.source = id;
  t.created = k;
  for (const VoxelIndex& v : voxels) t.anchor += voxel_center(v, l);
  t.anchor /= static_cast<double>(voxels.size());
  for (const VoxelIndex& v : voxels) {
    const auto cell = grid.cell_of(v);
    if (!cell) continue;
    for (const Particle& p : grid.slots(*cell)) {
      if (!p.valid || p.instance != id) continue;
      t.points.push_back(p.position - t.anchor);
      t.weights.push_back(p.weight);
    }
  }
  if (t.points.empty()) return StoreOutcome::kNotComplete;

  const double ml = params.match_voxel_size > 0 ? params.match_voxel_size : l;
  const MatchEvidence self = make_evidence(t.points, ml);
  for (const Template& existing : library.templates(t.label)) {
    if (similarity(self, existing, Transform::identity()) >= params.prune_score) return StoreOutcome::kPruned;
  }
  library.add(std::move(t));
  return StoreOutcome::kStored;
}

}  // namespace pimap
