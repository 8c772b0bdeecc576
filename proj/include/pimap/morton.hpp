#pragma once

#include <cstdint>
#include <stdexcept>

#include <Eigen/Core>

namespace pimap {

namespace detail {

// Spreads the low 21 bits of v so that bit i lands on bit 3i.
constexpr std::uint64_t spread_bits(std::uint64_t v) {
  v &= 0x1fffffULL;
  v = (v | (v << 32)) & 0x1f00000000ffffULL;
  v = (v | (v << 16)) & 0x1f0000ff0000ffULL;
  v = (v | (v << 8)) & 0x100f00f00f00f00fULL;
  v = (v | (v << 4)) & 0x10c30c30c30c30c3ULL;
  v = (v | (v << 2)) & 0x1249249249249249ULL;
  return v;
}

constexpr std::uint64_t compact_bits(std::uint64_t v) {
  v &= 0x1249249249249249ULL;
  v = (v ^ (v >> 2)) & 0x10c30c30c30c30c3ULL;
  v = (v ^ (v >> 4)) & 0x100f00f00f00f00fULL;
  v = (v ^ (v >> 8)) & 0x1f0000ff0000ffULL;
  v = (v ^ (v >> 16)) & 0x1f00000000ffffULL;
  v = (v ^ (v >> 32)) & 0x1fffffULL;
  return v;
}

}  // namespace detail

inline constexpr int kMaxMortonBits = 21;

/// Interleaves x into bit 0, y into bit 1, z into bit 2 of each triple.
/// Indices must be in [0, 2^bits); anything else throws std::out_of_range.
inline std::uint64_t morton_encode(int ix, int iy, int iz, int bits = kMaxMortonBits) {
  if (bits < 1 || bits > kMaxMortonBits) throw std::out_of_range("morton bit width out of range");
  const std::int64_t limit = std::int64_t{1} << bits;
  if (ix < 0 || iy < 0 || iz < 0 || ix >= limit || iy >= limit || iz >= limit)
    throw std::out_of_range("morton index out of range");
  return detail::spread_bits(static_cast<std::uint64_t>(ix)) |
         (detail::spread_bits(static_cast<std::uint64_t>(iy)) << 1) |
         (detail::spread_bits(static_cast<std::uint64_t>(iz)) << 2);
}

inline Eigen::Vector3i morton_decode(std::uint64_t code) {
  return {static_cast<int>(detail::compact_bits(code)), static_cast<int>(detail::compact_bits(code >> 1)),
          static_cast<int>(detail::compact_bits(code >> 2))};
}

}  // namespace pimap
