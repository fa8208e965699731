#include "sgscene/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "sgscene/components.hpp"

namespace sgscene {

namespace {

template <typename Grid>
ClassCounts count_components(const Grid& grid, int floor) {
  ClassCounts out{};
  for (int k = 0; k < kNumCountable; ++k) {
    for (const auto& comp : label_components(grid, kCountableClasses[static_cast<std::size_t>(k)])) {
      if (static_cast<int>(comp.voxels.size()) >= floor) ++out[static_cast<std::size_t>(k)];
    }
  }
  return out;
}

}  // namespace

ClassCounts count_objects(const VoxelScene& scene, int min_voxels) { return count_components(scene, min_voxels); }

ClassCounts count_objects(const BevMap& map, int min_cells) { return count_components(map, min_cells); }

MaeResult mae_counts(const std::vector<ClassCounts>& generated, const std::vector<ClassCounts>& requested) {
  if (generated.size() != requested.size()) throw std::invalid_argument("mae_counts: unpaired inputs");
  MaeResult r;
  if (generated.empty()) return r;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    for (std::size_t k = 0; k < kNumCountable; ++k) {
      r.per_class[k] += std::abs(generated[i][k] - requested[i][k]);
    }
  }
  const double n = static_cast<double>(generated.size());
  double sum = 0.0;
  for (auto& v : r.per_class) {
    sum += v;
    v /= n;
  }
  r.overall = sum / (n * kNumCountable);
  return r;
}

MaeResult mae_counts(const std::vector<VoxelScene>& scenes, const std::vector<SceneGraph>& graphs) {
  if (scenes.size() != graphs.size()) throw std::invalid_argument("mae_counts: unpaired inputs");
  std::vector<ClassCounts> gen, req;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    gen.push_back(count_objects(scenes[i]));
    req.push_back(graphs[i].class_counts());
  }
  return mae_counts(gen, req);
}

double jaccard_categories(const ClassCounts& scene, const ClassCounts& graph) {
  int both = 0, either = 0;
  for (std::size_t k = 0; k < kNumCountable; ++k) {
    const bool a = scene[k] > 0, b = graph[k] > 0;
    both += a && b;
    either += a || b;
  }
  return either == 0 ? 1.0 : static_cast<double>(both) / either;
}

double jaccard_categories(const VoxelScene& scene, const SceneGraph& graph) {
  return jaccard_categories(count_objects(scene), graph.class_counts());
}

}  // namespace sgscene
