#include "pimap/filter_params.hpp"

#include <stdexcept>
#include <string>

namespace pimap {

std::string_view to_string(UpdateMode mode) { return mode == UpdateMode::kIndividual ? "if" : "cf"; }

UpdateMode parse_update_mode(std::string_view name) {
  if (name == "if") return UpdateMode::kIndividual;
  if (name == "cf") return UpdateMode::kCollective;
  throw std::invalid_argument("update mode must be 'if' or 'cf', got '" + std::string(name) + "'");
}

void FilterParams::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(p_detect > 0 && p_detect <= 1, "p_detect must be in (0, 1]");
  require(p_survive > 0 && p_survive <= 1, "p_survive must be in (0, 1]");
  require(clutter >= 0, "clutter must be nonnegative");
  require((process_noise.array() >= 0).all() && process_noise.allFinite(),
          "process_noise must be nonnegative");
  require(sigma_slope >= 0 && sigma_offset > 0, "sigma needs slope >= 0 and offset > 0");
  require(p_transition >= 0 && p_transition < 1, "p_transition must be in [0, 1)");
  require(forget_speed > 0, "forget_speed must be positive");
  require(forget_horizon >= 0, "forget_horizon must be nonnegative");
  require(newborns_per_measurement >= 0, "newborns_per_measurement must be nonnegative");
  require(newborn_weight >= 0, "newborn_weight must be nonnegative");
  require(occupancy_threshold > 0, "occupancy_threshold must be positive");
  require(bbox_dilation >= 0, "bbox_dilation must be nonnegative");
  require(activation_epsilon > 0, "activation_epsilon must be positive");
  require(match_floor >= 0 && match_floor < 1, "match_floor must be in [0, 1)");
}

}  // namespace pimap
