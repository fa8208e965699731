#pragma once

#include <array>
#include <vector>

#include "sgscene/palette.hpp"
#include "sgscene/scene_graph.hpp"
#include "sgscene/voxel.hpp"

namespace sgscene {

using ClassCounts = std::array<int, kNumCountable>;  // indexed like kCountableClasses

// 26-connected components per countable class; components below `min_voxels` are dropped.
ClassCounts count_objects(const VoxelScene& scene, int min_voxels = 2);
// Same on a BEV map with 8-connectivity. Pedestrians and poles cover a single BEV cell, hence
// the lower default floor.
ClassCounts count_objects(const BevMap& map, int min_cells = 1);

struct MaeResult {
  double overall = 0.0;
  std::array<double, kNumCountable> per_class{};
};

// overall = mean over (scene, class) of |generated - requested|; per_class restricts to one class.
MaeResult mae_counts(const std::vector<ClassCounts>& generated, const std::vector<ClassCounts>& requested);
MaeResult mae_counts(const std::vector<VoxelScene>& scenes, const std::vector<SceneGraph>& graphs);

// |present in both| / |present in either| over countable classes; 1.0 when both are empty.
double jaccard_categories(const ClassCounts& scene, const ClassCounts& graph);
double jaccard_categories(const VoxelScene& scene, const SceneGraph& graph);

}  // namespace sgscene
