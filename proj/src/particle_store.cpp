#include "pimap/particle_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "pimap/morton.hpp"
#include "pimap/resample.hpp"

namespace pimap {

void GridConfig::validate() const {
  if (log2_dim < 1 || log2_dim > 10) throw std::invalid_argument("grid log2_dim must be in [1, 10]");
  if (!(voxel_size > 0)) throw std::invalid_argument("grid voxel_size must be positive");
  if (cell_capacity < 1 || cell_capacity > 1024)
    throw std::invalid_argument("grid cell_capacity must be in [1, 1024]");
}

VoxelGrid::VoxelGrid(const GridConfig& config, const Vec3& sensor_position) : config_(config) {
  config_.validate();
  const auto n = static_cast<std::size_t>(dim()) * dim() * dim();
  cell_block_.assign(n, kNoBlock);
  min_index_ = voxel_of(sensor_position, voxel_size()) - VoxelIndex::Constant(dim() / 2);
  residual_ = sensor_position - (min_index_ + VoxelIndex::Constant(dim() / 2)).cast<double>() * voxel_size();
}

bool VoxelGrid::contains(const VoxelIndex& global) const {
  const VoxelIndex rel = global - min_index_;
  return (rel.array() >= 0).all() && (rel.array() < dim()).all();
}

CellIndex VoxelGrid::ring_cell(const VoxelIndex& global) const {
  const int mask = dim() - 1;
  return static_cast<CellIndex>(
      morton_encode(global.x() & mask, global.y() & mask, global.z() & mask, config_.log2_dim));
}

std::optional<CellIndex> VoxelGrid::cell_of(const VoxelIndex& global) const {
  if (!contains(global)) return std::nullopt;
  return ring_cell(global);
}

VoxelIndex VoxelGrid::global_index(CellIndex cell) const {
  const VoxelIndex ring = morton_decode(cell);
  const int mask = dim() - 1;
  VoxelIndex out;
  for (int a = 0; a < 3; ++a) {
    const int offset = (ring(a) - (min_index_(a) & mask)) & mask;
    out(a) = min_index_(a) + offset;
  }
  return out;
}

RecenterReport VoxelGrid::recenter(const Vec3& sensor_position) {
  RecenterReport report;
  const VoxelIndex new_min = voxel_of(sensor_position, voxel_size()) - VoxelIndex::Constant(dim() / 2);
  report.shift = new_min - min_index_;
  residual_ = sensor_position - (new_min + VoxelIndex::Constant(dim() / 2)).cast<double>() * voxel_size();
  if (report.shift.isZero()) return report;

  std::int64_t overlap = 1;
  for (int a = 0; a < 3; ++a) overlap *= std::max(0, dim() - std::abs(report.shift(a)));
  report.voxels_relocated = static_cast<std::int64_t>(dim()) * dim() * dim() - overlap;

  std::vector<CellIndex> leaving;
  for (std::size_t b = 0; b < block_cell_.size(); ++b) {
    const CellIndex cell = block_cell_[b];
    if (cell == kNoCell) continue;
    const VoxelIndex g = global_index(cell);
    const VoxelIndex rel = g - new_min;
    if ((rel.array() < 0).any() || (rel.array() >= dim()).any()) leaving.push_back(cell);
  }
  for (CellIndex cell : leaving) {
    report.particles_dropped += live_count(cell);
    clear_cell(cell);
    ++report.cells_cleared;
  }
  min_index_ = new_min;
  return report;
}

std::uint32_t VoxelGrid::ensure_block(CellIndex cell) {
  std::uint32_t& slot = cell_block_[cell];
  if (slot != kNoBlock) return slot;
  const auto cap = static_cast<std::size_t>(capacity());
  if (!free_blocks_.empty()) {
    slot = free_blocks_.back();
    free_blocks_.pop_back();
  } else {
    slot = static_cast<std::uint32_t>(block_cell_.size());
    block_cell_.push_back(kNoCell);
    block_live_.push_back(0);
    pool_.resize(pool_.size() + cap);
  }
  block_cell_[slot] = cell;
  block_live_[slot] = 0;
  std::fill_n(pool_.begin() + static_cast<std::ptrdiff_t>(slot * cap), cap, Particle{});
  return slot;
}

void VoxelGrid::release_block(std::uint32_t block) {
  const auto cap = static_cast<std::size_t>(capacity());
  std::fill_n(pool_.begin() + static_cast<std::ptrdiff_t>(block * cap), cap, Particle{});
  cell_block_[block_cell_[block]] = kNoBlock;
  block_cell_[block] = kNoCell;
  block_live_[block] = 0;
  free_blocks_.push_back(block);
}

InsertOutcome VoxelGrid::insert(const Particle& p, Rng& rng, Step current_step) {
  const auto cell = cell_of(p.position);
  if (!cell) return InsertOutcome::kDiscardedOutOfRange;
  const std::uint32_t block = ensure_block(*cell);
  auto span = slots(*cell);
  InsertOutcome outcome = InsertOutcome::kAccepted;
  if (block_live_[block] >= capacity()) {
    block_live_[block] = static_cast<std::uint16_t>(resample_cell(span, rng, current_step));
    if (block_live_[block] >= capacity()) return InsertOutcome::kDiscardedFull;
    outcome = InsertOutcome::kResampledThenAccepted;
  }
  for (Particle& slot : span) {
    if (!slot.valid) {
      slot = p;
      slot.valid = true;
      ++block_live_[block];
      return outcome;
    }
  }
  return InsertOutcome::kDiscardedFull;
}

std::span<Particle> VoxelGrid::slots(CellIndex cell) {
  const std::uint32_t block = cell_block_[cell];
  if (block == kNoBlock) return {};
  const auto cap = static_cast<std::size_t>(capacity());
  return {pool_.data() + block * cap, cap};
}

std::span<const Particle> VoxelGrid::slots(CellIndex cell) const {
  const std::uint32_t block = cell_block_[cell];
  if (block == kNoBlock) return {};
  const auto cap = static_cast<std::size_t>(capacity());
  return {pool_.data() + block * cap, cap};
}

int VoxelGrid::live_count(CellIndex cell) const {
  const std::uint32_t block = cell_block_[cell];
  return block == kNoBlock ? 0 : block_live_[block];
}

CellIndex VoxelGrid::cell_of_ref(ParticleRef ref) const {
  return block_cell_[ref / static_cast<std::uint32_t>(capacity())];
}

void VoxelGrid::invalidate(ParticleRef ref) {
  Particle& p = pool_[ref];
  if (!p.valid) return;
  p.valid = false;
  --block_live_[ref / static_cast<std::uint32_t>(capacity())];
}

void VoxelGrid::refresh(CellIndex cell) {
  const std::uint32_t block = cell_block_[cell];
  if (block == kNoBlock) return;
  int live = 0;
  for (const Particle& p : slots(cell)) live += p.valid ? 1 : 0;
  block_live_[block] = static_cast<std::uint16_t>(live);
}

double VoxelGrid::weight_sum(CellIndex cell) const {
  double total = 0.0;
  for (const Particle& p : slots(cell))
    if (p.valid) total += p.weight;
  return total;
}

std::map<InstanceId, double> VoxelGrid::weight_sum_by_id(CellIndex cell) const {
  std::map<InstanceId, double> out;
  for (const Particle& p : slots(cell))
    if (p.valid) out[p.instance] += p.weight;
  return out;
}

std::size_t VoxelGrid::particle_count() const {
  std::size_t n = 0;
  for (std::size_t b = 0; b < block_cell_.size(); ++b)
    if (block_cell_[b] != kNoCell) n += block_live_[b];
  return n;
}

void VoxelGrid::clear_cell(CellIndex cell) {
  const std::uint32_t block = cell_block_[cell];
  if (block != kNoBlock) release_block(block);
}

void VoxelGrid::clear() {
  for (std::size_t b = 0; b < block_cell_.size(); ++b)
    if (block_cell_[b] != kNoCell) release_block(static_cast<std::uint32_t>(b));
}

std::size_t VoxelGrid::release_empty_cells() {
  std::size_t released = 0;
  for (std::size_t b = 0; b < block_cell_.size(); ++b) {
    if (block_cell_[b] != kNoCell && block_live_[b] == 0) {
      release_block(static_cast<std::uint32_t>(b));
      ++released;
    }
  }
  return released;
}

InstanceRegistry::InstanceRegistry() {
  InstanceRecord& bg = records_[kUnlabeledInstance];
  bg.id = kUnlabeledInstance;
  bg.background = true;
  bg.movable = false;
}

InstanceRecord& InstanceRegistry::ensure(InstanceId id, SemanticLabel label, bool background, bool movable,
                                         Step step) {
  auto [it, inserted] = records_.try_emplace(id);
  if (inserted) {
    it->second.id = id;
    it->second.label = label;
    it->second.background = background;
    it->second.movable = movable && !background;
    it->second.first_seen = step;
  }
  return it->second;
}

InstanceRecord* InstanceRegistry::find(InstanceId id) {
  auto it = records_.find(id);
  return it == records_.end() ? nullptr : &it->second;
}

const InstanceRecord* InstanceRegistry::find(InstanceId id) const {
  auto it = records_.find(id);
  return it == records_.end() ? nullptr : &it->second;
}

SemanticLabel InstanceRegistry::label_of(InstanceId id) const {
  const InstanceRecord* r = find(id);
  return r ? r->label : SemanticLabel::kUnlabeled;
}

bool InstanceRegistry::is_background(InstanceId id) const {
  const InstanceRecord* r = find(id);
  return r && r->background;
}

void InstanceRegistry::push_pose(InstanceId id, const Transform& pose, Step step) {
  InstanceRecord* r = find(id);
  if (!r || r->background) return;
  r->history.push_back({pose, step});
  while (r->history.size() > kHistoryCapacity) r->history.pop_front();
}

void InstanceRegistry::rebuild_indices(const VoxelGrid& grid) {
  for (auto& [id, r] : records_) r.particles.clear();
  grid.for_each_particle([&](ParticleRef ref, const Particle& p) {
    auto it = records_.find(p.instance);
    if (it != records_.end()) it->second.particles.push_back(ref);
  });
  for (auto& [id, r] : records_) r.empty_frames = r.particles.empty() ? r.empty_frames + 1 : 0;
}

std::vector<InstanceId> InstanceRegistry::collect_garbage(int max_empty_frames) {
  std::vector<InstanceId> removed;
  for (auto it = records_.begin(); it != records_.end();) {
    if (!it->second.background && it->second.empty_frames > max_empty_frames) {
      removed.push_back(it->first);
      it = records_.erase(it);
    } else {
      ++it;
    }
  }
  return removed;
}

RelocateResult relocate_particles(VoxelGrid& grid, const std::map<InstanceId, Transform>& transforms, Rng& rng,
                                  Step current_step, const std::function<Vec3(const Vec3&)>& perturb) {
  RelocateResult result;
  result.found = true;
  if (transforms.empty()) return result;
  std::vector<ParticleRef> refs;
  grid.for_each_particle([&](ParticleRef ref, const Particle& p) {
    if (transforms.count(p.instance)) refs.push_back(ref);
  });
  std::vector<Particle> moving;
  moving.reserve(refs.size());
  for (ParticleRef ref : refs) {
    moving.push_back(grid.particle(ref));
    grid.invalidate(ref);
  }
  for (Particle& p : moving) {
    p.position = transforms.at(p.instance) * p.position;
    if (perturb) p.position += perturb(p.position);
    const InsertOutcome outcome = grid.insert(p, rng, current_step);
    if (outcome == InsertOutcome::kAccepted || outcome == InsertOutcome::kResampledThenAccepted)
      ++result.moved;
    else
      ++result.discarded;
  }
  return result;
}

RelocateResult relocate_instance_particles(VoxelGrid& grid, InstanceRegistry& registry, InstanceId id,
                                           const Transform& T, Rng& rng, Step current_step,
                                           const std::function<Vec3(const Vec3&)>& perturb) {
  InstanceRecord* record = registry.find(id);
  if (!record) return {};
  RelocateResult result = relocate_particles(grid, {{id, T}}, rng, current_step, perturb);
  record->particles.clear();
  grid.for_each_particle([&](ParticleRef ref, const Particle& p) {
    if (p.instance == id) record->particles.push_back(ref);
  });
  return result;
}

namespace {

constexpr const char* kSnapshotMagic = "PIMAP-PARTICLES";

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw std::runtime_error("snapshot truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string expect_line(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("snapshot header missing '" + key + "'");
  if (line.rfind(key + " ", 0) != 0) throw std::runtime_error("snapshot header expected '" + key + "'");
  return line.substr(key.size() + 1);
}

}  // namespace

void write_snapshot(const VoxelGrid& grid, std::ostream& out) {
  std::vector<SnapshotRecord> records;
  grid.for_each_particle([&](ParticleRef ref, const Particle& p) {
    records.push_back({grid.cell_of_ref(ref), p.position, p.weight, p.instance, p.last_match_step});
  });
  std::ostringstream header;
  header.precision(17);
  const Vec3 a = grid.anchor();
  header << kSnapshotMagic << "\n"
         << "version 1\n"
         << "log2_dim " << grid.config().log2_dim << "\n"
         << "voxel_size " << grid.voxel_size() << "\n"
         << "anchor " << a.x() << " " << a.y() << " " << a.z() << "\n"
         << "records " << records.size() << "\n";
  out << header.str();
  for (const SnapshotRecord& r : records) {
    put_le<std::uint32_t>(out, r.cell);
    put_le<double>(out, r.position.x());
    put_le<double>(out, r.position.y());
    put_le<double>(out, r.position.z());
    put_le<double>(out, r.weight);
    put_le<std::uint32_t>(out, to_underlying(r.instance));
    put_le<std::int64_t>(out, r.last_match_step);
  }
}

Snapshot read_snapshot(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kSnapshotMagic) throw std::runtime_error("not a particle snapshot");
  Snapshot s;
  s.version = std::stoi(expect_line(in, "version"));
  if (s.version != 1) throw std::runtime_error("unsupported snapshot version");
  s.log2_dim = std::stoi(expect_line(in, "log2_dim"));
  s.voxel_size = std::stod(expect_line(in, "voxel_size"));
  std::istringstream anchor(expect_line(in, "anchor"));
  anchor >> s.anchor.x() >> s.anchor.y() >> s.anchor.z();
  const auto n = std::stoull(expect_line(in, "records"));
  s.records.resize(n);
  for (SnapshotRecord& r : s.records) {
    r.cell = get_le<std::uint32_t>(in);
    r.position.x() = get_le<double>(in);
    r.position.y() = get_le<double>(in);
    r.position.z() = get_le<double>(in);
    r.weight = get_le<double>(in);
    r.instance = InstanceId{get_le<std::uint32_t>(in)};
    r.last_match_step = get_le<std::int64_t>(in);
  }
  return s;
}

}  // namespace pimap
