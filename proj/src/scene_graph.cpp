#include "sgscene/scene_graph.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "sgscene/errors.hpp"

namespace sgscene {

using nlohmann::json;

namespace {

bool is_road_id(const SceneGraph& g, const std::string& id) {
  return std::any_of(g.roads.begin(), g.roads.end(), [&](const RoadNode& r) { return r.id == id; });
}

void orient_edge(const SceneGraph& g, Edge& e) {
  if (e.kind == EdgeKind::RoadConnectivity) {
    if (is_road_id(g, e.a) && !is_road_id(g, e.b)) std::swap(e.a, e.b);
    return;
  }
  if (e.b < e.a) std::swap(e.a, e.b);
}

std::string_view edge_kind_name(EdgeKind k) {
  return k == EdgeKind::PhysicalProximity ? "proximity" : "road";
}

}  // namespace

const RoadNode& SceneGraph::road() const {
  if (roads.empty()) throw std::logic_error("scene graph has no road node");
  return roads.front();
}

std::vector<std::string> SceneGraph::node_ids() const {
  std::vector<std::string> ids;
  ids.reserve(node_count());
  for (const auto& r : roads) ids.push_back(r.id);
  for (const auto& n : instances) ids.push_back(n.id);
  return ids;
}

const InstanceNode* SceneGraph::find_instance(const std::string& id) const {
  for (const auto& n : instances) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

std::array<int, kNumCountable> SceneGraph::class_counts() const {
  std::array<int, kNumCountable> counts{};
  for (const auto& n : instances) {
    int k = countable_index(n.cls);
    if (k >= 0) ++counts[static_cast<std::size_t>(k)];
  }
  return counts;
}

void SceneGraph::canonicalize() {
  std::sort(instances.begin(), instances.end(),
            [](const InstanceNode& x, const InstanceNode& y) { return x.id < y.id; });
  for (auto& e : edges) orient_edge(*this, e);
  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    return std::tie(x.kind, x.a, x.b) < std::tie(y.kind, y.a, y.b);
  });
}

bool SceneGraph::operator==(const SceneGraph& other) const {
  SceneGraph lhs = *this;
  SceneGraph rhs = other;
  lhs.canonicalize();
  rhs.canonicalize();
  return lhs.roads == rhs.roads && lhs.instances == rhs.instances && lhs.edges == rhs.edges &&
         lhs.meta == rhs.meta;
}

json ValidationReport::to_json() const {
  json arr = json::array();
  for (const auto& v : violations) {
    arr.push_back({{"code", v.code}, {"message", v.message}, {"subject", v.subject}});
  }
  return {{"valid", ok()}, {"violations", arr}};
}

ValidationReport validate_graph(const SceneGraph& g) {
  ValidationReport report;
  auto add = [&](std::string code, std::string message, std::string subject) {
    report.violations.push_back({std::move(code), std::move(message), std::move(subject)});
  };

  if (g.roads.empty()) add("missing_road", "missing road node", "");
  for (std::size_t i = 1; i < g.roads.size(); ++i) {
    add("duplicate_road", "duplicate road node", g.roads[i].id);
  }
  if (g.node_count() > static_cast<std::size_t>(kMaxGraphNodes)) {
    add("too_many_nodes", "graph has " + std::to_string(g.node_count()) + " nodes (max " +
                              std::to_string(kMaxGraphNodes) + ")",
        "");
  }

  std::unordered_map<std::string, bool> kind_of;  // id -> is road
  auto register_id = [&](const std::string& id, bool road) {
    if (id.empty()) {
      add("empty_id", "node with empty id", id);
      return;
    }
    if (!kind_of.emplace(id, road).second) add("duplicate_id", "duplicate node id " + id, id);
  };
  for (const auto& r : g.roads) register_id(r.id, true);
  for (const auto& n : g.instances) {
    register_id(n.id, false);
    if (!is_countable(n.cls)) {
      add("non_countable_class",
          "instance " + n.id + " has non-countable class " + std::string(class_name(n.cls)), n.id);
    }
    if (n.patch && !n.patch->in_range()) {
      add("patch_out_of_range",
          "instance " + n.id + " patch (" + std::to_string(n.patch->row) + "," +
              std::to_string(n.patch->col) + ") outside the 8x8 grid",
          n.id);
    }
  }

  std::set<std::tuple<EdgeKind, std::string, std::string>> seen;
  for (const auto& e : g.edges) {
    std::string label = std::string(edge_kind_name(e.kind)) + ":" + e.a + "-" + e.b;
    bool dangling = false;
    for (const auto* endpoint : {&e.a, &e.b}) {
      if (!kind_of.contains(*endpoint)) {
        add("dangling_endpoint", "dangling endpoint " + *endpoint, *endpoint);
        dangling = true;
      }
    }
    if (e.a == e.b) {
      add("self_edge", "self edge on " + e.a, label);
      continue;
    }
    if (!dangling) {
      bool ra = kind_of.at(e.a);
      bool rb = kind_of.at(e.b);
      if (e.kind == EdgeKind::PhysicalProximity && (ra || rb)) {
        add("bad_proximity_edge", "proximity edge must join two instance nodes", label);
      }
      if (e.kind == EdgeKind::RoadConnectivity && ra == rb) {
        add("bad_road_edge", "road edge must join an instance node and the road node", label);
      }
    }
    auto key = std::make_tuple(e.kind, std::min(e.a, e.b), std::max(e.a, e.b));
    if (!seen.insert(key).second) add("duplicate_edge", "duplicate edge " + label, label);
  }
  return report;
}

AdjacencyMatrix adjacency(const SceneGraph& g, const std::vector<std::string>& node_order) {
  const auto ids = g.node_ids();
  if (node_order.size() != ids.size()) {
    throw OrderingError("node order has " + std::to_string(node_order.size()) +
                        " entries, graph has " + std::to_string(ids.size()) + " nodes");
  }
  std::unordered_map<std::string, int> pos;
  for (std::size_t i = 0; i < node_order.size(); ++i) {
    if (std::find(ids.begin(), ids.end(), node_order[i]) == ids.end()) {
      throw OrderingError("unknown node id in order: " + node_order[i]);
    }
    if (!pos.emplace(node_order[i], static_cast<int>(i)).second) {
      throw OrderingError("node id repeated in order: " + node_order[i]);
    }
  }
  AdjacencyMatrix m;
  m.n = static_cast<int>(node_order.size());
  m.data.assign(static_cast<std::size_t>(m.n * m.n), 0);
  for (const auto& e : g.edges) {
    auto ia = pos.find(e.a);
    auto ib = pos.find(e.b);
    if (ia == pos.end() || ib == pos.end() || ia->second == ib->second) continue;
    m.data[static_cast<std::size_t>(ia->second * m.n + ib->second)] = 1;
    m.data[static_cast<std::size_t>(ib->second * m.n + ia->second)] = 1;
  }
  return m;
}

json graph_to_json_value(const SceneGraph& g) {
  SceneGraph c = g;
  c.canonicalize();
  auto road_json = [](const RoadNode& r) {
    json j = {{"type", std::string(road_type_name(r.type))}};
    if (r.id != kDefaultRoadId) j["id"] = r.id;
    return j;
  };
  json out = json::object();
  if (c.roads.size() == 1) {
    out["road"] = road_json(c.roads.front());
  } else {
    out["road"] = json::array();
    for (const auto& r : c.roads) out["road"].push_back(road_json(r));
  }
  out["instances"] = json::array();
  for (const auto& n : c.instances) {
    json patch = n.patch ? json::array({n.patch->row, n.patch->col}) : json(nullptr);
    out["instances"].push_back(
        {{"id", n.id}, {"class", std::string(class_name(n.cls))}, {"patch", patch}});
  }
  out["edges"] = json::array();
  for (const auto& e : c.edges) {
    out["edges"].push_back({{"kind", std::string(edge_kind_name(e.kind))}, {"a", e.a}, {"b", e.b}});
  }
  if (!c.meta.empty()) out["meta"] = c.meta;
  return out;
}

std::string graph_to_json(const SceneGraph& g) { return graph_to_json_value(g).dump(); }

namespace {

const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(path + "/" + key, "missing field");
  return *it;
}

std::string require_string(const json& j, const std::string& key, const std::string& path) {
  const json& v = require(j, key, path);
  if (!v.is_string()) throw ParseError(path + "/" + key, "expected a string");
  return v.get<std::string>();
}

RoadNode parse_road(const json& j, const std::string& path) {
  RoadNode r;
  auto type = require_string(j, "type", path);
  auto rt = road_type_from_name(type);
  if (!rt) throw ParseError(path + "/type", "unknown road type '" + type + "'");
  r.type = *rt;
  if (j.contains("id")) r.id = require_string(j, "id", path);
  return r;
}

}  // namespace

SceneGraph graph_from_json_value(const json& j) {
  if (!j.is_object()) throw ParseError("", "scene graph must be a JSON object");
  SceneGraph g;
  const json& road = require(j, "road", "");
  if (road.is_array()) {
    for (std::size_t i = 0; i < road.size(); ++i) {
      g.roads.push_back(parse_road(road[i], "/road/" + std::to_string(i)));
    }
  } else {
    g.roads.push_back(parse_road(road, "/road"));
  }

  if (j.contains("instances")) {
    const json& inst = j.at("instances");
    if (!inst.is_array()) throw ParseError("/instances", "expected an array");
    for (std::size_t i = 0; i < inst.size(); ++i) {
      const std::string path = "/instances/" + std::to_string(i);
      InstanceNode n;
      n.id = require_string(inst[i], "id", path);
      auto cls = require_string(inst[i], "class", path);
      auto sc = class_from_name(cls);
      if (!sc) throw ParseError(path + "/class", "unknown class '" + cls + "'");
      n.cls = *sc;
      if (inst[i].contains("patch") && !inst[i].at("patch").is_null()) {
        const json& p = inst[i].at("patch");
        if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() ||
            !p[1].is_number_integer()) {
          throw ParseError(path + "/patch", "expected [row, col] integers or null");
        }
        n.patch = PatchPos{p[0].get<int>(), p[1].get<int>()};
      }
      g.instances.push_back(std::move(n));
    }
  }

  if (j.contains("edges")) {
    const json& edges = j.at("edges");
    if (!edges.is_array()) throw ParseError("/edges", "expected an array");
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const std::string path = "/edges/" + std::to_string(i);
      Edge e;
      auto kind = require_string(edges[i], "kind", path);
      if (kind == "proximity" || kind == "PhysicalProximity") {
        e.kind = EdgeKind::PhysicalProximity;
      } else if (kind == "road" || kind == "RoadConnectivity") {
        e.kind = EdgeKind::RoadConnectivity;
      } else {
        throw ParseError(path + "/kind", "unknown edge kind '" + kind + "'");
      }
      e.a = require_string(edges[i], "a", path);
      e.b = require_string(edges[i], "b", path);
      g.edges.push_back(std::move(e));
    }
  }

  if (j.contains("meta")) {
    if (!j.at("meta").is_object()) throw ParseError("/meta", "expected an object");
    g.meta = j.at("meta");
  }
  return g;
}

SceneGraph json_from_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("", e.what());
  }
  return graph_from_json_value(j);
}

}  // namespace sgscene
