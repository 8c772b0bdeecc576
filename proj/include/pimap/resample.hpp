#pragma once

#include <optional>
#include <span>

#include "pimap/particle_store.hpp"

namespace pimap {

/// Halves the live particles of one cell (floor, at least one survivor among
/// non-negligible particles).
///
/// Slots are handed to instance IDs in proportion to their weight mass, then
/// drawn within each ID by rejection sampling with replacement. Survivors of an
/// ID share that ID's mass equally, so both the cell total and every per-ID sum
/// are preserved. When there are more IDs than slots only the heaviest IDs
/// survive and are rescaled to keep the total.
///
/// Particles with born_step == *exempt_step are left untouched. Other
/// particles lighter than kNegligibleWeight are dropped first and their mass
/// spread over the survivors, which frees the slots held by objects that have
/// left; per-ID sums then hold only up to that mass. Returns the number of
/// live particles afterwards.
inline constexpr double kNegligibleWeight = 1e-9;

int resample_cell(std::span<Particle> slots, Rng& rng, std::optional<Step> exempt_step = std::nullopt);

}  // namespace pimap
