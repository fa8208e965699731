#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sgscene {

// Merged semantic palette. Ground and sidewalk are folded into Road; the order is part of
// every on-disk format (voxel bytes, checkpoints) so it must never change.
enum class SemanticClass : std::uint8_t {
  Free = 0,
  Road = 1,
  Building = 2,
  Vehicle = 3,
  Pedestrian = 4,
  Pole = 5,
  Vegetation = 6,
  Other = 7,
};

inline constexpr int kNumClasses = 8;
inline constexpr int kNumCountable = 3;
inline constexpr std::array<SemanticClass, kNumCountable> kCountableClasses = {
    SemanticClass::Vehicle, SemanticClass::Pedestrian, SemanticClass::Pole};

enum class RoadType : std::uint8_t {
  StraightRoad = 0,
  TJunction = 1,
  Crossroad = 2,
  BendRoad = 3,
  Others = 4,
};

inline constexpr int kNumRoadTypes = 5;
inline constexpr std::array<RoadType, kNumRoadTypes> kAllRoadTypes = {
    RoadType::StraightRoad, RoadType::TJunction, RoadType::Crossroad, RoadType::BendRoad,
    RoadType::Others};

struct ClassPalette {
  std::string version;
  std::vector<std::string> classes;
  std::vector<SemanticClass> countable;

  static const ClassPalette& standard();
};

std::string_view class_name(SemanticClass c);
std::optional<SemanticClass> class_from_name(std::string_view name);
bool is_countable(SemanticClass c);
// Position of a countable class inside kCountableClasses; -1 for background classes.
int countable_index(SemanticClass c);

std::string_view road_type_name(RoadType t);
std::optional<RoadType> road_type_from_name(std::string_view name);

inline constexpr std::string_view kPaletteVersion = "sg8-v1";

}  // namespace sgscene
