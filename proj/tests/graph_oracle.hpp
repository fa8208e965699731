#pragma once

#include <map>
#include <set>
#include <string>
#include <tuple>

#include "sgscene/scene_graph.hpp"

namespace sgscene::testing {

// Graph identity up to node relabeling: nodes keyed by (class, patch).
struct Canonical {
  RoadType road;
  std::multiset<std::pair<int, int>> nodes;  // (class, patch index)
  std::set<std::tuple<int, std::pair<int, int>, std::pair<int, int>>> edges;
  bool operator==(const Canonical&) const = default;
};

inline Canonical canonical(const SceneGraph& g) {
  Canonical c{g.road().type, {}, {}};
  std::map<std::string, std::pair<int, int>> key;
  key[g.road().id] = {-1, -1};
  for (const auto& n : g.instances) {
    key[n.id] = {static_cast<int>(n.cls), n.patch ? n.patch->index() : -1};
    c.nodes.insert(key[n.id]);
  }
  for (const auto& e : g.edges) {
    auto a = key.at(e.a), b = key.at(e.b);
    if (b < a) std::swap(a, b);
    c.edges.insert({static_cast<int>(e.kind), a, b});
  }
  return c;
}

}  // namespace sgscene::testing
