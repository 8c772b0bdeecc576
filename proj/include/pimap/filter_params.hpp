#pragma once

#include <string_view>

#include "pimap/types.hpp"

namespace pimap {

enum class UpdateMode {
  /// Particles are updated only by measurements with their own ID.
  kIndividual,
  /// Particles are updated by all measurements through the ID-transition and
  /// forgetting terms.
  kCollective,
};

std::string_view to_string(UpdateMode mode);
/// Accepts "if" / "cf"; throws std::invalid_argument otherwise.
UpdateMode parse_update_mode(std::string_view name);

struct FilterParams {
  double p_detect = 0.98;
  double p_survive = 1.0;
  double clutter = 0.01;
  /// Diagonal of the prediction noise covariance Q (m^2).
  Vec3 process_noise = Vec3::Constant(0.01);
  /// Measurement standard deviation sigma(d) = slope * d + offset (m).
  double sigma_slope = 1e-3;
  double sigma_offset = 1e-2;

  double p_transition = 0.5;
  double forget_speed = 1.0;
  int forget_horizon = 5;
  bool forgetting = true;

  int newborns_per_measurement = 5;
  double newborn_weight = 0.001;

  double occupancy_threshold = 0.8;
  int bbox_dilation = 5;
  /// Density floor defining the activation sphere around a measurement.
  double activation_epsilon = 1e-6;
  /// Fraction of the Gaussian peak below which a same-ID term does not count
  /// as a match for last_match_step.
  double match_floor = 1e-6;

  UpdateMode mode = UpdateMode::kCollective;

  double sigma(double depth) const { return sigma_slope * depth + sigma_offset; }
  /// Throws std::invalid_argument naming the first violated bound.
  void validate() const;
};

}  // namespace pimap
