#pragma once

// Predict, update, birth and occupancy estimation of the instance-augmented
// SMC-PHD filter.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pimap/filter_params.hpp"
#include "pimap/measurement.hpp"
#include "pimap/particle_store.hpp"
#include "pimap/visibility.hpp"

namespace pimap {

/// 1 for equal IDs, p_transition otherwise.
double id_transition(InstanceId z_id, InstanceId p_id, const FilterParams& params);

/// Truncated forgetting curve exp(-dk / S), zero beyond the horizon.
double forgetting(Step dk, const FilterParams& params);

/// Isotropic 3D Gaussian density with standard deviation sigma.
double gaussian3(const Vec3& z, const Vec3& x, double sigma);

struct PredictReport {
  std::size_t moved = 0;
  std::size_t discarded = 0;
  /// Occluded instances moved by constant-velocity extrapolation.
  std::vector<InstanceId> extrapolated;
  /// Occluded instances without enough history; left in place.
  std::vector<InstanceId> missing_history;
};

/// Moves instance-of-interest particles by their observed or extrapolated
/// transform plus process noise, scales every weight by p_survive and appends
/// the resulting pose to each instance's history.
PredictReport predict(VoxelGrid& grid, InstanceRegistry& registry, const MeasurementFrame& frame,
                      const FilterParams& params, Step k, Rng& rng);

struct UpdateReport {
  std::size_t visible = 0;
  std::size_t measurements = 0;
  std::size_t matched = 0;
  std::size_t full_image_boxes = 0;
};

/// Weight update of every particle listed in the indices image:
///   w <- [1 - Pd + sum_z Pd g(z|x) / (kappa + C(z))] w,  C(z) = sum_j Pd w_j g(z|x_j)
/// where both sums run over the measurement's activation box only.
UpdateReport update(VoxelGrid& grid, const UpdateIndicesImage& indices, const MeasurementFrame& frame,
                    const Camera& cam, const FilterParams& params, Step k);

/// Particles born from a matched template for one instance, in map frame.
struct TemplateBirth {
  InstanceId instance{0};
  std::vector<Vec3> positions;
};

struct BirthReport {
  std::size_t born = 0;
  std::size_t template_born = 0;
  std::size_t discarded = 0;
};

/// L_b jittered newborns per measurement, plus template particles for
/// instances listed in `templates`.
BirthReport birth(VoxelGrid& grid, const MeasurementFrame& frame, const std::vector<TemplateBirth>& templates,
                  const FilterParams& params, Step k, Rng& rng);

enum class VoxelStatus : std::uint8_t { kFree = 0, kOccupied = 1, kSpeculative = 2 };

std::string_view to_string(VoxelStatus status);

struct LabeledVoxel {
  VoxelIndex index = VoxelIndex::Zero();
  VoxelStatus status = VoxelStatus::kFree;
  InstanceId instance{0};
  SemanticLabel label = SemanticLabel::kUnlabeled;
  double weight = 0.0;
};

/// Non-free voxels sorted by index.
struct LabeledVoxelMap {
  double voxel_size = 0.0;
  Step step = 0;
  std::vector<LabeledVoxel> voxels;

  const LabeledVoxel* find(const VoxelIndex& index) const;
  std::vector<VoxelIndex> occupied() const;
  std::size_t count(VoxelStatus status) const;
};

LabeledVoxelMap estimate_map(const VoxelGrid& grid, const InstanceRegistry& registry,
                             const FilterParams& params, Step k);

/// One line per non-free voxel: "x y z status instance_id semantic_label",
/// voxel centers in meters.
void write_map_text(const LabeledVoxelMap& map, std::ostream& out);

// Binary variant:
//   PIMAP-MAP\n version 1\n voxel_size <l>\n step <k>\n records <n>\n
//   n x { i32 ix | i32 iy | i32 iz | u8 status | u32 instance | u16 label | f64 weight }
void write_map_binary(const LabeledVoxelMap& map, std::ostream& out);
LabeledVoxelMap read_map_binary(std::istream& in);

}  // namespace pimap
