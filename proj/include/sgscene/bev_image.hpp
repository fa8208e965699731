#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "sgscene/voxel.hpp"

namespace sgscene {

using Rgb = std::array<std::uint8_t, 3>;

Rgb class_color(SemanticClass c);

// 8-bit RGB PNG of the map, each cell drawn as a `scale` x `scale` square. Row 0 is the top.
std::string encode_bev_png(const BevMap& map, int scale = 8);

}  // namespace sgscene
