#include "sgscene/components.hpp"

#include <array>
#include <deque>
#include <utility>

namespace sgscene {

namespace {

template <typename Grid, typename Neighbors>
std::vector<Component> flood(const Grid& grid, SemanticClass cls, std::size_t n,
                             Neighbors&& neighbors, auto&& yx_of) {
  const auto target = static_cast<std::uint8_t>(cls);
  std::vector<std::uint8_t> seen(n, 0);
  std::vector<Component> out;
  std::deque<std::size_t> queue;
  for (std::size_t start = 0; start < n; ++start) {
    if (seen[start] || grid.labels[start] != target) continue;
    Component comp;
    comp.cls = cls;
    seen[start] = 1;
    queue.push_back(start);
    double sy = 0.0;
    double sx = 0.0;
    while (!queue.empty()) {
      std::size_t v = queue.front();
      queue.pop_front();
      comp.voxels.push_back(v);
      auto [y, x] = yx_of(v);
      sy += y + 0.5;
      sx += x + 0.5;
      neighbors(v, [&](std::size_t u) {
        if (!seen[u] && grid.labels[u] == target) {
          seen[u] = 1;
          queue.push_back(u);
        }
      });
    }
    comp.centroid_y = sy / static_cast<double>(comp.voxels.size());
    comp.centroid_x = sx / static_cast<double>(comp.voxels.size());
    out.push_back(std::move(comp));
  }
  return out;
}

}  // namespace

std::vector<Component> label_components(const VoxelScene& scene, SemanticClass cls) {
  const int H = scene.height;
  const int W = scene.width;
  const int D = scene.depth;
  auto coords = [&](std::size_t v) {
    int x = static_cast<int>(v % W);
    int y = static_cast<int>((v / W) % H);
    int z = static_cast<int>(v / (static_cast<std::size_t>(W) * H));
    return std::array<int, 3>{y, x, z};
  };
  auto neighbors = [&](std::size_t v, auto&& visit) {
    auto [y, x, z] = coords(v);
    for (int dz = -1; dz <= 1; ++dz) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dz == 0 && dy == 0 && dx == 0) continue;
          int zz = z + dz, yy = y + dy, xx = x + dx;
          if (zz < 0 || zz >= D || yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
          visit(scene.index(yy, xx, zz));
        }
      }
    }
  };
  auto yx = [&](std::size_t v) {
    auto c = coords(v);
    return std::pair<int, int>{c[0], c[1]};
  };
  return flood(scene, cls, scene.labels.size(), neighbors, yx);
}

std::vector<Component> label_components(const BevMap& map, SemanticClass cls) {
  const int H = map.height;
  const int W = map.width;
  auto neighbors = [&](std::size_t v, auto&& visit) {
    int y = static_cast<int>(v / W);
    int x = static_cast<int>(v % W);
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dy == 0 && dx == 0) continue;
        int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
        visit(map.index(yy, xx));
      }
    }
  };
  auto yx = [&](std::size_t v) {
    return std::pair<int, int>{static_cast<int>(v / W), static_cast<int>(v % W)};
  };
  return flood(map, cls, map.labels.size(), neighbors, yx);
}

}  // namespace sgscene
