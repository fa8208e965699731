#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgscene/palette.hpp"

namespace sgscene {

inline constexpr int kPatchGrid = 8;
inline constexpr int kMaxGraphNodes = 64;
inline constexpr std::string_view kDefaultRoadId = "road";

struct PatchPos {
  int row = 0;
  int col = 0;

  int index() const { return row * kPatchGrid + col; }
  static PatchPos from_index(int idx) { return {idx / kPatchGrid, idx % kPatchGrid}; }
  bool in_range() const { return row >= 0 && row < kPatchGrid && col >= 0 && col < kPatchGrid; }

  auto operator<=>(const PatchPos&) const = default;
};

struct InstanceNode {
  std::string id;
  SemanticClass cls = SemanticClass::Vehicle;
  std::optional<PatchPos> patch;

  bool operator==(const InstanceNode&) const = default;
};

struct RoadNode {
  std::string id{kDefaultRoadId};
  RoadType type = RoadType::Others;

  bool operator==(const RoadNode&) const = default;
};

enum class EdgeKind : std::uint8_t { PhysicalProximity = 0, RoadConnectivity = 1 };

struct Edge {
  EdgeKind kind = EdgeKind::PhysicalProximity;
  std::string a;
  std::string b;

  bool operator==(const Edge&) const = default;
};

// A scene graph as edited by users. `roads` is a list only so that malformed graphs (zero or
// several road nodes) can be represented and reported; valid graphs hold exactly one.
struct SceneGraph {
  std::vector<RoadNode> roads;
  std::vector<InstanceNode> instances;
  std::vector<Edge> edges;
  nlohmann::json meta = nlohmann::json::object();

  const RoadNode& road() const;
  std::size_t node_count() const { return roads.size() + instances.size(); }
  // Road node(s) first, then instances in stored order. This is the encoder's default order.
  std::vector<std::string> node_ids() const;
  const InstanceNode* find_instance(const std::string& id) const;
  // Number of instance nodes per countable class, indexed like kCountableClasses.
  std::array<int, kNumCountable> class_counts() const;

  // Sorts instances by id, orders edge endpoints, sorts and de-duplicates edges.
  void canonicalize();

  bool operator==(const SceneGraph& other) const;
};

struct Violation {
  std::string code;
  std::string message;
  std::string subject;  // offending node or edge id

  bool operator==(const Violation&) const = default;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  nlohmann::json to_json() const;
};

ValidationReport validate_graph(const SceneGraph& g);

// Dense symmetric 0/1 adjacency with zero diagonal.
struct AdjacencyMatrix {
  int n = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t operator()(int i, int j) const { return data[static_cast<std::size_t>(i * n + j)]; }
  bool operator==(const AdjacencyMatrix&) const = default;
};

AdjacencyMatrix adjacency(const SceneGraph& g, const std::vector<std::string>& node_order);

std::string graph_to_json(const SceneGraph& g);
nlohmann::json graph_to_json_value(const SceneGraph& g);
SceneGraph json_from_text(const std::string& text);
SceneGraph graph_from_json_value(const nlohmann::json& j);

}  // namespace sgscene
