#include "pimap/types.hpp"

#include <array>
#include <stdexcept>

namespace pimap {
namespace {

constexpr std::array<std::string_view, kNumSemanticLabels> kLabelNames = {
    "unlabeled", "ground", "wall", "building", "vegetation", "pole",
    "car",       "van",    "truck", "pedestrian", "chair",    "misc",
};

}  // namespace

std::string_view to_string(SemanticLabel label) {
  const auto index = static_cast<std::size_t>(label);
  if (index >= kLabelNames.size()) return "unlabeled";
  return kLabelNames[index];
}

SemanticLabel parse_semantic_label(std::string_view name) {
  for (std::size_t i = 0; i < kLabelNames.size(); ++i) {
    if (kLabelNames[i] == name) return static_cast<SemanticLabel>(i);
  }
  throw std::invalid_argument("unknown semantic label '" + std::string(name) + "'");
}

}  // namespace pimap
