#include "pimap/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_set>

namespace pimap {

namespace {

std::int64_t voxel_key(const VoxelIndex& v) {
  constexpr std::int64_t kOffset = 1 << 20;
  constexpr std::int64_t kMask = (std::int64_t{1} << 21) - 1;
  return ((v.x() + kOffset) & kMask) << 42 | ((v.y() + kOffset) & kMask) << 21 | ((v.z() + kOffset) & kMask);
}

double mean_nearest(const std::vector<Vec3>& from, const NearestNeighbor& to) {
  double sum = 0.0;
  for (const Vec3& p : from) sum += to.distance(p);
  return sum / static_cast<double>(from.size());
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

NearestNeighbor::NearestNeighbor(std::vector<Vec3> points) : points_(std::move(points)) {
  std::vector<int> order(points_.size());
  std::iota(order.begin(), order.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(order, 0, static_cast<int>(order.size()), 0);
}

int NearestNeighbor::build(std::vector<int>& order, int lo, int hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 3;
  const int mid = lo + (hi - lo) / 2;
  std::nth_element(order.begin() + lo, order.begin() + mid, order.begin() + hi, [&](int a, int b) {
    if (points_[a](axis) != points_[b](axis)) return points_[a](axis) < points_[b](axis);
    return a < b;
  });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({order[mid], axis, -1, -1});
  const int left = build(order, lo, mid, depth + 1);
  const int right = build(order, mid + 1, hi, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void NearestNeighbor::search(int node, const Vec3& q, double& best) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Vec3& p = points_[n.point];
  best = std::min(best, (p - q).squaredNorm());
  const double diff = q(n.axis) - p(n.axis);
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best);
  if (diff * diff < best) search(far, q, best);
}

double NearestNeighbor::distance(const Vec3& q) const {
  if (root_ < 0) return std::numeric_limits<double>::infinity();
  double best = std::numeric_limits<double>::infinity();
  search(root_, q, best);
  return std::sqrt(best);
}

std::optional<double> ahd(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty()) return std::nullopt;
  const NearestNeighbor na(a), nb(b);
  return 0.5 * (mean_nearest(a, nb) + mean_nearest(b, na));
}

std::optional<AdmResult> adm(const std::vector<Vec3>& gt_movable, const std::vector<Vec3>& estimated,
                             double worst_case_distance) {
  if (gt_movable.empty()) return std::nullopt;
  if (estimated.empty()) return AdmResult{worst_case_distance, true};
  return AdmResult{mean_nearest(gt_movable, NearestNeighbor(estimated)), false};
}

double Confusion::precision() const { return ratio(tp, tp + fp); }
double Confusion::recall() const { return ratio(tp, tp + fn); }
double Confusion::f1() const {
  const double p = precision(), r = recall();
  return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
}

Confusion occupancy_confusion(const std::vector<VoxelIndex>& estimated, const std::vector<VoxelIndex>& truth) {
  std::unordered_set<std::int64_t> gt;
  for (const VoxelIndex& v : truth) gt.insert(voxel_key(v));
  std::unordered_set<std::int64_t> est;
  Confusion c;
  for (const VoxelIndex& v : estimated) {
    const auto key = voxel_key(v);
    if (!est.insert(key).second) continue;
    if (gt.count(key))
      ++c.tp;
    else
      ++c.fp;
  }
  c.fn = gt.size() - c.tp;
  return c;
}

std::optional<double> ClassIoU::iou(SemanticLabel label) const {
  auto it = counts.find(label);
  if (it == counts.end() || it->second.second == 0) return std::nullopt;
  return ratio(it->second.first, it->second.second);
}

std::optional<double> ClassIoU::mean() const {
  double sum = 0.0;
  int n = 0;
  for (const auto& [label, count] : gt_count) {
    if (count == 0) continue;
    sum += iou(label).value_or(0.0);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

namespace {

// Accumulates IoU counts from (estimated, true) label pairs; unlabeled on a
// side means nothing there.
struct IoUCounter {
  ClassIoU result;

  void add(SemanticLabel est, SemanticLabel gt) {
    if (gt != SemanticLabel::kUnlabeled) ++result.gt_count[gt];
    if (est == gt) {
      if (est == SemanticLabel::kUnlabeled) return;
      ++result.counts[est].first;
      ++result.counts[est].second;
      return;
    }
    if (est != SemanticLabel::kUnlabeled) ++result.counts[est].second;
    if (gt != SemanticLabel::kUnlabeled) ++result.counts[gt].second;
  }
};

}  // namespace

ClassIoU semantic_iou_3d(const LabeledVoxelMap& estimated, const GroundTruthMap& truth) {
  std::unordered_map<std::int64_t, SemanticLabel> est;
  for (const LabeledVoxel& v : estimated.voxels)
    if (v.status == VoxelStatus::kOccupied) est[voxel_key(v.index)] = v.label;
  IoUCounter counter;
  for (const GroundTruthVoxel& g : truth.voxels) {
    auto it = est.find(voxel_key(g.index));
    if (it == est.end()) {
      counter.add(SemanticLabel::kUnlabeled, g.label);
    } else {
      counter.add(it->second, g.label);
      est.erase(it);
    }
  }
  for (const auto& [key, label] : est) counter.add(label, SemanticLabel::kUnlabeled);
  return counter.result;
}

MapImages render_map(const LabeledVoxelMap& map, const Camera& cam, const Pose& pose, Splat splat) {
  MapImages img;
  img.labels.setZero(cam.height, cam.width);
  img.instances.setZero(cam.height, cam.width);
  img.depth.setZero(cam.height, cam.width);
  const Transform map_to_cam = pose.camera_to_map.inverse();
  for (const LabeledVoxel& v : map.voxels) {
    if (v.status != VoxelStatus::kOccupied) continue;
    const Vec3 c = map_to_cam * voxel_center(v.index, map.voxel_size);
    if (!(c.z() > 0)) continue;
    const Vec2 uv(cam.focal * c.x() / c.z() + cam.cx, cam.focal * c.y() / c.z() + cam.cy);
    const double half = splat == Splat::kProjectedSquare ? 0.5 * cam.focal * map.voxel_size / c.z() : 0.0;
    const int u0 = static_cast<int>(std::floor(uv.x() - half));
    const int u1 = static_cast<int>(std::floor(uv.x() + half));
    const int v0 = static_cast<int>(std::floor(uv.y() - half));
    const int v1 = static_cast<int>(std::floor(uv.y() + half));
    for (int pv = std::max(0, v0); pv <= std::min(cam.height - 1, v1); ++pv) {
      for (int pu = std::max(0, u0); pu <= std::min(cam.width - 1, u1); ++pu) {
        float& d = img.depth(pv, pu);
        if (d > 0 && d <= c.z()) continue;
        if (d == 0) ++img.covered;
        d = static_cast<float>(c.z());
        img.labels(pv, pu) = static_cast<std::uint16_t>(v.label);
        img.instances(pv, pu) = to_underlying(v.instance);
      }
    }
  }
  return img;
}

namespace {

SemanticLabel truth_label(const TruthView& truth, std::uint32_t id) {
  if (id == 0) return SemanticLabel::kUnlabeled;
  auto it = truth.labels.find(InstanceId{id});
  return it == truth.labels.end() ? SemanticLabel::kUnlabeled : it->second;
}

void check_sizes(const MapImages& rendered, const TruthView& truth) {
  if (rendered.labels.rows() != truth.instances.rows() || rendered.labels.cols() != truth.instances.cols())
    throw std::invalid_argument("rendered map and truth image sizes differ");
}

}  // namespace

ClassIoU semantic_iou_2d(const MapImages& rendered, const TruthView& truth) {
  check_sizes(rendered, truth);
  IoUCounter counter;
  for (int v = 0; v < truth.instances.rows(); ++v)
    for (int u = 0; u < truth.instances.cols(); ++u)
      counter.add(static_cast<SemanticLabel>(rendered.labels(v, u)), truth_label(truth, truth.instances(v, u)));
  return counter.result;
}

double instance_mf1(const std::map<InstanceId, std::vector<std::int64_t>>& estimated,
                    const std::map<InstanceId, std::vector<std::int64_t>>& truth) {
  if (truth.empty()) return 0.0;
  std::unordered_map<std::int64_t, InstanceId> owner;
  for (const auto& [id, keys] : estimated)
    for (auto k : keys) owner.emplace(k, id);

  struct Pair {
    double iou;
    InstanceId gt, est;
    std::size_t inter;
  };
  std::vector<Pair> pairs;
  for (const auto& [gid, keys] : truth) {
    std::map<InstanceId, std::size_t> inter;
    for (auto k : keys) {
      auto it = owner.find(k);
      if (it != owner.end()) ++inter[it->second];
    }
    for (const auto& [eid, n] : inter) {
      const std::size_t uni = keys.size() + estimated.at(eid).size() - n;
      pairs.push_back({ratio(n, uni), gid, eid, n});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
  std::set<InstanceId> used_gt, used_est;
  double sum = 0.0;
  for (const Pair& p : pairs) {
    if (!(p.iou > 0.5)) break;
    if (used_gt.count(p.gt) || used_est.count(p.est)) continue;
    used_gt.insert(p.gt);
    used_est.insert(p.est);
    sum += 2.0 * static_cast<double>(p.inter) /
           static_cast<double>(truth.at(p.gt).size() + estimated.at(p.est).size());
  }
  return sum / static_cast<double>(truth.size());
}

double instance_mf1_3d(const LabeledVoxelMap& estimated, const GroundTruthMap& truth) {
  std::map<InstanceId, std::vector<std::int64_t>> est, gt;
  for (const LabeledVoxel& v : estimated.voxels)
    if (v.status == VoxelStatus::kOccupied) est[v.instance].push_back(voxel_key(v.index));
  for (const GroundTruthVoxel& g : truth.voxels)
    if (!g.background) gt[g.instance].push_back(voxel_key(g.index));
  return instance_mf1(est, gt);
}

std::optional<double> instance_mf1_2d(const MapImages& rendered, const TruthView& truth) {
  check_sizes(rendered, truth);
  std::map<InstanceId, std::vector<std::int64_t>> est, gt;
  for (int v = 0; v < truth.instances.rows(); ++v) {
    for (int u = 0; u < truth.instances.cols(); ++u) {
      const std::int64_t key = static_cast<std::int64_t>(v) * truth.instances.cols() + u;
      if (rendered.depth(v, u) > 0) est[InstanceId{rendered.instances(v, u)}].push_back(key);
      const std::uint32_t id = truth.instances(v, u);
      if (!id) continue;
      auto bg = truth.background.find(InstanceId{id});
      if (bg != truth.background.end() && bg->second) continue;
      gt[InstanceId{id}].push_back(key);
    }
  }
  if (gt.empty()) return std::nullopt;
  return instance_mf1(est, gt);
}

std::optional<double> SpeculationStats::recall() const {
  if (missing == 0) return std::nullopt;
  return ratio(speculative_true, missing);
}

std::optional<double> SpeculationStats::precision() const {
  if (speculative == 0) return std::nullopt;
  return ratio(speculative_true, speculative);
}

SpeculationStats speculation_stats(const LabeledVoxelMap& estimated, const GroundTruthMap& truth) {
  std::unordered_map<std::int64_t, VoxelStatus> est;
  SpeculationStats s;
  for (const LabeledVoxel& v : estimated.voxels) {
    est[voxel_key(v.index)] = v.status;
    if (v.status == VoxelStatus::kSpeculative) ++s.speculative;
  }
  for (const GroundTruthVoxel& g : truth.voxels) {
    auto it = est.find(voxel_key(g.index));
    const VoxelStatus st = it == est.end() ? VoxelStatus::kFree : it->second;
    if (st == VoxelStatus::kOccupied) continue;
    ++s.missing;
    if (st == VoxelStatus::kSpeculative) ++s.speculative_true;
  }
  return s;
}

FrameMetrics evaluate_frame(const LabeledVoxelMap& estimated, const GroundTruthMap& truth, const EvalOptions& options,
                            const TruthView* view) {
  FrameMetrics m;
  m.step = estimated.step;
  m.gt_voxels = truth.voxels.size();
  m.speculative = estimated.count(VoxelStatus::kSpeculative);

  const std::vector<VoxelIndex> occ = estimated.occupied();
  m.estimated_occupied = occ.size();
  std::vector<VoxelIndex> gt_idx;
  std::vector<Vec3> gt_pts, movable;
  gt_idx.reserve(truth.voxels.size());
  for (const GroundTruthVoxel& g : truth.voxels) {
    gt_idx.push_back(g.index);
    gt_pts.push_back(voxel_center(g.index, truth.voxel_size));
    if (g.movable) movable.push_back(gt_pts.back());
  }
  std::vector<Vec3> est_pts;
  est_pts.reserve(occ.size());
  for (const VoxelIndex& v : occ) est_pts.push_back(voxel_center(v, estimated.voxel_size));

  m.ahd = ahd(est_pts, gt_pts);
  const Confusion c = occupancy_confusion(occ, gt_idx);
  m.precision = c.precision();
  m.recall = c.recall();
  m.f1 = c.f1();
  if (auto a = adm(movable, est_pts, options.worst_case_distance)) {
    m.adm = a->value;
    m.adm_worst_case = a->worst_case;
  }
  const ClassIoU iou3 = semantic_iou_3d(estimated, truth);
  m.miou_3d = iou3.mean();
  for (int i = 0; i < kClassColumns; ++i) {
    const auto label = static_cast<SemanticLabel>(i + 1);
    if (iou3.gt_count.count(label)) m.iou_3d[i] = iou3.iou(label).value_or(0.0);
  }
  if (!truth.voxels.empty()) m.mf1_3d = instance_mf1_3d(estimated, truth);
  m.speculation_recall = speculation_stats(estimated, truth).recall();
  if (view) {
    const MapImages img = render_map(estimated, view->camera, view->pose, options.splat);
    m.miou_2d = semantic_iou_2d(img, *view).mean();
    m.mf1_2d = instance_mf1_2d(img, *view);
  }
  return m;
}

std::vector<std::string> metrics_columns() {
  std::vector<std::string> cols = {"step",   "est_occupied", "speculative", "gt_voxels", "ahd",    "precision",
                                   "recall", "f1",           "adm",         "adm_worst", "miou3d", "miou2d",
                                   "mf1_3d", "mf1_2d",       "spec_recall"};
  for (int i = 0; i < kClassColumns; ++i)
    cols.push_back("iou3d_" + std::string(to_string(static_cast<SemanticLabel>(i + 1))));
  return cols;
}

std::vector<std::optional<double>> metrics_values(const FrameMetrics& m) {
  std::vector<std::optional<double>> v = {static_cast<double>(m.estimated_occupied),
                                          static_cast<double>(m.speculative),
                                          static_cast<double>(m.gt_voxels),
                                          m.ahd,
                                          m.precision,
                                          m.recall,
                                          m.f1,
                                          m.adm,
                                          m.adm ? std::optional<double>(m.adm_worst_case ? 1.0 : 0.0) : std::nullopt,
                                          m.miou_3d,
                                          m.miou_2d,
                                          m.mf1_3d,
                                          m.mf1_2d,
                                          m.speculation_recall};
  for (const auto& x : m.iou_3d) v.push_back(x);
  return v;
}

namespace {

void write_values(std::ostream& out, const std::vector<std::optional<double>>& values) {
  for (const auto& x : values) {
    out << ',';
    if (x) out << std::fixed << std::setprecision(6) << *x;
  }
  out << '\n';
}

}  // namespace

void write_metrics_header(std::ostream& out) {
  const auto cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
}

void write_metrics_row(std::ostream& out, const FrameMetrics& m) {
  out << m.step;
  write_values(out, metrics_values(m));
}

void MetricsAggregator::add(const FrameMetrics& m) {
  const auto values = metrics_values(m);
  if (sum_.empty()) {
    sum_.assign(values.size(), 0.0);
    count_.assign(values.size(), 0);
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i]) continue;
    sum_[i] += *values[i];
    ++count_[i];
  }
  ++frames_;
}

std::vector<std::optional<double>> MetricsAggregator::means() const {
  std::vector<std::optional<double>> out(metrics_columns().size() - 1);
  for (std::size_t i = 0; i < sum_.size(); ++i)
    if (count_[i]) out[i] = sum_[i] / static_cast<double>(count_[i]);
  return out;
}

void MetricsAggregator::write_row(std::ostream& out) const {
  out << "mean";
  write_values(out, means());
}

}  // namespace pimap
