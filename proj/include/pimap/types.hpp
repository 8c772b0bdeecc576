#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace pimap {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;
using VoxelIndex = Eigen::Vector3i;

/// Discrete time step of the frame pipeline.
using Step = std::int64_t;

/// Every stochastic stage draws from one of these; seeded once per run.
using Rng = std::mt19937_64;

/// Instance identity carried by particles and measurements.
enum class InstanceId : std::uint32_t {};

constexpr std::uint32_t to_underlying(InstanceId id) { return static_cast<std::uint32_t>(id); }

/// Pixels without a segmentation label (instance image value 0) are folded
/// into this reserved background instance.
inline constexpr InstanceId kUnlabeledInstance{std::numeric_limits<std::uint32_t>::max()};

/// Instance image value meaning "no label".
inline constexpr std::uint32_t kUnlabeledPixel = 0;

inline InstanceId instance_from_pixel(std::uint32_t value) {
  return value == kUnlabeledPixel ? kUnlabeledInstance : InstanceId{value};
}

enum class SemanticLabel : std::uint16_t {
  kUnlabeled = 0,
  kGround,
  kWall,
  kBuilding,
  kVegetation,
  kPole,
  kCar,
  kVan,
  kTruck,
  kPedestrian,
  kChair,
  kMisc,
};

inline constexpr int kNumSemanticLabels = 12;

std::string_view to_string(SemanticLabel label);

/// Throws std::invalid_argument on unknown names.
SemanticLabel parse_semantic_label(std::string_view name);

struct VoxelIndexHash {
  std::size_t operator()(const VoxelIndex& v) const noexcept {
    // Large primes spatial hash.
    const auto x = static_cast<std::uint64_t>(static_cast<std::uint32_t>(v.x()));
    const auto y = static_cast<std::uint64_t>(static_cast<std::uint32_t>(v.y()));
    const auto z = static_cast<std::uint64_t>(static_cast<std::uint32_t>(v.z()));
    return static_cast<std::size_t>((x * 73856093ULL) ^ (y * 19349663ULL) ^ (z * 83492791ULL));
  }
};

struct VoxelIndexLess {
  bool operator()(const VoxelIndex& a, const VoxelIndex& b) const noexcept {
    if (a.x() != b.x()) return a.x() < b.x();
    if (a.y() != b.y()) return a.y() < b.y();
    return a.z() < b.z();
  }
};

}  // namespace pimap
