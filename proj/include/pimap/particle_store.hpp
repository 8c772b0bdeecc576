#pragma once

// Egocentric ring buffer of voxel cells holding particles, and the instance
// registry that carries per-object state between frames.

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pimap/geometry.hpp"
#include "pimap/types.hpp"

namespace pimap {

/// One weighted hypothesis of a surface point.
struct Particle {
  Vec3 position = Vec3::Zero();
  double weight = 0.0;
  InstanceId instance{0};
  /// Last step at which a same-ID measurement updated this particle.
  Step last_match_step = 0;
  Step born_step = 0;
  bool valid = false;
  /// Born from a memory template and not yet confirmed by a same-ID measurement.
  bool speculative = false;
};

struct GridConfig {
  int log2_dim = 7;
  double voxel_size = 0.2;
  int cell_capacity = 8;

  int dim() const { return 1 << log2_dim; }
  double extent() const { return dim() * voxel_size; }
  void validate() const;
};

/// Morton code of a ring-buffer slot.
using CellIndex = std::uint32_t;

/// Stable handle to a particle slot, valid until the owning cell is cleared.
using ParticleRef = std::uint32_t;

enum class InsertOutcome {
  kAccepted,
  kResampledThenAccepted,
  kDiscardedFull,
  kDiscardedOutOfRange,
};

struct RecenterReport {
  VoxelIndex shift = VoxelIndex::Zero();
  /// Voxel slots that changed which world voxel they represent.
  std::int64_t voxels_relocated = 0;
  std::int64_t cells_cleared = 0;
  std::int64_t particles_dropped = 0;
};

class VoxelGrid {
 public:
  static constexpr std::uint32_t kNoBlock = 0xffffffffu;

  explicit VoxelGrid(const GridConfig& config, const Vec3& sensor_position = Vec3::Zero());

  const GridConfig& config() const { return config_; }
  int dim() const { return config_.dim(); }
  double voxel_size() const { return config_.voxel_size; }
  int capacity() const { return config_.cell_capacity; }

  /// Global index of the lowest covered voxel on every axis.
  const VoxelIndex& min_index() const { return min_index_; }
  /// Map-frame corner of the covered box.
  Vec3 anchor() const { return min_index_.cast<double>() * config_.voxel_size; }
  /// Sensor motion not yet turned into a whole-voxel shift.
  const Vec3& residual() const { return residual_; }

  bool contains(const VoxelIndex& global) const;
  bool contains(const Vec3& p) const { return contains(voxel_of(p, config_.voxel_size)); }
  std::optional<CellIndex> cell_of(const VoxelIndex& global) const;
  std::optional<CellIndex> cell_of(const Vec3& p) const {
    return cell_of(voxel_of(p, config_.voxel_size));
  }
  VoxelIndex global_index(CellIndex cell) const;
  Vec3 cell_center(CellIndex cell) const { return voxel_center(global_index(cell), voxel_size()); }

  /// Scrolls the window so the sensor sits in the center voxel. Cells that fall
  /// out of range are cleared; surviving particles are untouched.
  RecenterReport recenter(const Vec3& sensor_position);

  /// Places p in its cell. A full cell is resampled first (particles born at
  /// `current_step` are exempt); if it is still full p is discarded.
  InsertOutcome insert(const Particle& p, Rng& rng, Step current_step);

  std::span<Particle> slots(CellIndex cell);
  std::span<const Particle> slots(CellIndex cell) const;
  int live_count(CellIndex cell) const;

  Particle& particle(ParticleRef ref) { return pool_[ref]; }
  const Particle& particle(ParticleRef ref) const { return pool_[ref]; }
  CellIndex cell_of_ref(ParticleRef ref) const;
  /// Handle of slot `slot` of an allocated cell.
  ParticleRef ref(CellIndex cell, int slot) const {
    return cell_block_[cell] * static_cast<std::uint32_t>(capacity()) + static_cast<std::uint32_t>(slot);
  }
  void invalidate(ParticleRef ref);
  /// Re-derives the live count of a cell after its slots were edited in place.
  void refresh(CellIndex cell);

  double weight_sum(CellIndex cell) const;
  std::map<InstanceId, double> weight_sum_by_id(CellIndex cell) const;

  /// Visits every allocated cell in allocation order: f(CellIndex, span<const Particle>).
  template <typename F>
  void for_each_cell(F&& f) const {
    const auto cap = static_cast<std::size_t>(capacity());
    for (std::size_t b = 0; b < block_cell_.size(); ++b) {
      if (block_cell_[b] == kNoCell) continue;
      f(block_cell_[b], std::span<const Particle>(pool_.data() + b * cap, cap));
    }
  }
  /// Mutable variant; callers must refresh() cells whose validity flags change.
  template <typename F>
  void for_each_cell_mut(F&& f) {
    const auto cap = static_cast<std::size_t>(capacity());
    for (std::size_t b = 0; b < block_cell_.size(); ++b) {
      if (block_cell_[b] == kNoCell) continue;
      f(block_cell_[b], std::span<Particle>(pool_.data() + b * cap, cap));
    }
  }
  /// Calls f(ParticleRef, const Particle&) for every valid particle.
  template <typename F>
  void for_each_particle(F&& f) const {
    const auto cap = static_cast<std::size_t>(capacity());
    for (std::size_t b = 0; b < block_cell_.size(); ++b) {
      if (block_cell_[b] == kNoCell) continue;
      for (std::size_t s = 0; s < cap; ++s) {
        const Particle& p = pool_[b * cap + s];
        if (p.valid) f(static_cast<ParticleRef>(b * cap + s), p);
      }
    }
  }

  std::size_t allocated_cells() const { return block_cell_.size() - free_blocks_.size(); }
  std::size_t particle_count() const;
  void clear_cell(CellIndex cell);
  void clear();
  /// Returns blocks of cells without live particles to the pool.
  std::size_t release_empty_cells();

 private:
  static constexpr CellIndex kNoCell = 0xffffffffu;

  std::uint32_t ensure_block(CellIndex cell);
  void release_block(std::uint32_t block);
  CellIndex ring_cell(const VoxelIndex& global) const;

  GridConfig config_;
  VoxelIndex min_index_ = VoxelIndex::Zero();
  Vec3 residual_ = Vec3::Zero();
  std::vector<std::uint32_t> cell_block_;
  std::vector<CellIndex> block_cell_;
  std::vector<std::uint16_t> block_live_;
  std::vector<std::uint32_t> free_blocks_;
  std::vector<Particle> pool_;
};

struct PoseStamp {
  Transform pose;
  Step step = 0;
};

struct InstanceRecord {
  InstanceId id{0};
  SemanticLabel label = SemanticLabel::kUnlabeled;
  bool background = false;
  bool movable = true;
  /// Accumulated object poses (map frame) at recent steps, oldest first.
  std::deque<PoseStamp> history;
  std::vector<ParticleRef> particles;
  int empty_frames = 0;
  Step first_seen = 0;
  bool templated = false;
};

class InstanceRegistry {
 public:
  static constexpr std::size_t kHistoryCapacity = 8;

  InstanceRegistry();

  /// Creates the record on first sight; later calls leave existing data as is.
  InstanceRecord& ensure(InstanceId id, SemanticLabel label, bool background, bool movable, Step step);
  InstanceRecord* find(InstanceId id);
  const InstanceRecord* find(InstanceId id) const;
  bool contains(InstanceId id) const { return records_.count(id) != 0; }
  std::size_t size() const { return records_.size(); }

  SemanticLabel label_of(InstanceId id) const;
  bool is_background(InstanceId id) const;

  void push_pose(InstanceId id, const Transform& pose, Step step);

  /// Rebuilds every instance's particle list from the grid and ages records
  /// with no particles.
  void rebuild_indices(const VoxelGrid& grid);
  /// Drops non-background records that have been empty for more than
  /// `max_empty_frames` rebuilds. Returns the removed IDs.
  std::vector<InstanceId> collect_garbage(int max_empty_frames);

  auto begin() { return records_.begin(); }
  auto end() { return records_.end(); }
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

 private:
  std::map<InstanceId, InstanceRecord> records_;
};

struct RelocateResult {
  bool found = false;
  std::size_t moved = 0;
  std::size_t discarded = 0;
};

/// Moves the particles of every listed instance by its transform, re-binning
/// them in grid scan order. All movers are lifted out before any is
/// reinserted, so a resample triggered by one instance never reorders another
/// instance's pending particles.
RelocateResult relocate_particles(VoxelGrid& grid, const std::map<InstanceId, Transform>& transforms, Rng& rng,
                                  Step current_step, const std::function<Vec3(const Vec3&)>& perturb = {});

/// Moves every particle of an instance by T (plus an optional per-particle
/// perturbation), re-bins it and rebuilds the instance's index list.
RelocateResult relocate_instance_particles(VoxelGrid& grid, InstanceRegistry& registry, InstanceId id,
                                           const Transform& T, Rng& rng, Step current_step,
                                           const std::function<Vec3(const Vec3&)>& perturb = {});

// Snapshot export: a text header followed by little-endian binary records.
//
//   PIMAP-PARTICLES\n
//   version 1\n
//   log2_dim <m>\n
//   voxel_size <l>\n
//   anchor <x> <y> <z>\n
//   records <n>\n
//   <n x 48-byte records>
//
// record: u32 cell | f64 x | f64 y | f64 z | f64 weight | u32 instance | i64 last_match_step
struct SnapshotRecord {
  CellIndex cell = 0;
  Vec3 position = Vec3::Zero();
  double weight = 0.0;
  InstanceId instance{0};
  Step last_match_step = 0;
};

struct Snapshot {
  int version = 1;
  int log2_dim = 0;
  double voxel_size = 0.0;
  Vec3 anchor = Vec3::Zero();
  std::vector<SnapshotRecord> records;
};

void write_snapshot(const VoxelGrid& grid, std::ostream& out);
Snapshot read_snapshot(std::istream& in);

}  // namespace pimap
