#pragma once

#include <vector>

#include "sgscene/palette.hpp"
#include "sgscene/voxel.hpp"

namespace sgscene {

struct Component {
  SemanticClass cls = SemanticClass::Free;
  std::vector<std::size_t> voxels;  // linear indices into the source grid
  // BEV centroid in continuous map coordinates: cell (y, x) spans [y, y+1) x [x, x+1).
  double centroid_y = 0.0;
  double centroid_x = 0.0;

  std::size_t size() const { return voxels.size(); }
};

// 26-connected components of one class, ordered by their first voxel in storage order.
std::vector<Component> label_components(const VoxelScene& scene, SemanticClass cls);

// 8-connected components of one class on a BEV map.
std::vector<Component> label_components(const BevMap& map, SemanticClass cls);

}  // namespace sgscene
