#include "sgscene/palette.hpp"

#include <algorithm>

namespace sgscene {

namespace {

constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "Free", "Road", "Building", "Vehicle", "Pedestrian", "Pole", "Vegetation", "Other"};

constexpr std::array<std::string_view, kNumRoadTypes> kRoadNames = {
    "StraightRoad", "TJunction", "Crossroad", "BendRoad", "Others"};

}  // namespace

const ClassPalette& ClassPalette::standard() {
  static const ClassPalette palette = [] {
    ClassPalette p;
    p.version = std::string(kPaletteVersion);
    for (auto n : kClassNames) p.classes.emplace_back(n);
    p.countable.assign(kCountableClasses.begin(), kCountableClasses.end());
    return p;
  }();
  return palette;
}

std::string_view class_name(SemanticClass c) {
  return kClassNames.at(static_cast<std::size_t>(c));
}

std::optional<SemanticClass> class_from_name(std::string_view name) {
  auto it = std::find(kClassNames.begin(), kClassNames.end(), name);
  if (it == kClassNames.end()) return std::nullopt;
  return static_cast<SemanticClass>(it - kClassNames.begin());
}

bool is_countable(SemanticClass c) { return countable_index(c) >= 0; }

int countable_index(SemanticClass c) {
  for (int i = 0; i < kNumCountable; ++i) {
    if (kCountableClasses[i] == c) return i;
  }
  return -1;
}

std::string_view road_type_name(RoadType t) {
  return kRoadNames.at(static_cast<std::size_t>(t));
}

std::optional<RoadType> road_type_from_name(std::string_view name) {
  auto it = std::find(kRoadNames.begin(), kRoadNames.end(), name);
  if (it == kRoadNames.end()) return std::nullopt;
  return static_cast<RoadType>(it - kRoadNames.begin());
}

}  // namespace sgscene
