#include <doctest.h>

#include <algorithm>
#include <random>

#include "sgscene/errors.hpp"
#include "sgscene/scene_graph.hpp"

using namespace sgscene;

namespace {

SceneGraph road_only(RoadType t = RoadType::Crossroad) {
  SceneGraph g;
  g.roads.push_back({"road", t});
  return g;
}

SceneGraph random_graph(std::mt19937_64& rng, int max_instances = 20) {
  SceneGraph g = road_only(kAllRoadTypes[rng() % kNumRoadTypes]);
  const int n = static_cast<int>(rng() % static_cast<unsigned>(max_instances + 1));
  for (int i = 0; i < n; ++i) {
    InstanceNode node;
    node.id = "n" + std::to_string(i);
    node.cls = kCountableClasses[rng() % kNumCountable];
    if (rng() % 4 != 0) node.patch = PatchPos{static_cast<int>(rng() % 8), static_cast<int>(rng() % 8)};
    g.instances.push_back(node);
    if (rng() % 2) g.edges.push_back({EdgeKind::RoadConnectivity, node.id, "road"});
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (rng() % 5 == 0) {
        g.edges.push_back({EdgeKind::PhysicalProximity, "n" + std::to_string(i), "n" + std::to_string(j)});
      }
    }
  }
  return g;
}

// Independent oracle: scan every edge for every ordered pair of positions.
std::uint8_t brute_force_edge(const SceneGraph& g, const std::string& a, const std::string& b) {
  if (a == b) return 0;
  for (const auto& e : g.edges) {
    if ((e.a == a && e.b == b) || (e.a == b && e.b == a)) return 1;
  }
  return 0;
}

}  // namespace

TEST_CASE("palette is fixed") {
  const auto& p = ClassPalette::standard();
  REQUIRE(p.classes.size() == 8);
  CHECK(p.classes[0] == "Free");
  CHECK(p.classes[7] == "Other");
  CHECK(p.countable == std::vector<SemanticClass>{SemanticClass::Vehicle, SemanticClass::Pedestrian,
                                                  SemanticClass::Pole});
  CHECK(class_from_name("Tank") == std::nullopt);
  CHECK(road_type_from_name("TJunction") == RoadType::TJunction);
}

TEST_CASE("validate_graph") {
  SUBCASE("minimal graph is valid") { CHECK(validate_graph(road_only()).ok()); }

  SUBCASE("two road nodes") {
    SceneGraph g = road_only();
    g.roads.push_back({"road2", RoadType::StraightRoad});
    auto r = validate_graph(g);
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].message == "duplicate road node");
  }

  SUBCASE("dangling endpoint") {
    SceneGraph g = road_only();
    g.instances.push_back({"v1", SemanticClass::Vehicle, PatchPos{1, 1}});
    g.edges.push_back({EdgeKind::PhysicalProximity, "v1", "x9"});
    auto r = validate_graph(g);
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].message == "dangling endpoint x9");
    CHECK(r.violations[0].subject == "x9");
  }

  SUBCASE("every structural rule is reported") {
    SceneGraph g = road_only();
    g.instances.push_back({"v1", SemanticClass::Vehicle, PatchPos{8, 0}});
    g.instances.push_back({"b1", SemanticClass::Building, std::nullopt});
    g.instances.push_back({"v1", SemanticClass::Pole, std::nullopt});
    g.edges.push_back({EdgeKind::PhysicalProximity, "b1", "b1"});
    g.edges.push_back({EdgeKind::PhysicalProximity, "v1", "road"});
    g.edges.push_back({EdgeKind::RoadConnectivity, "v1", "b1"});
    g.edges.push_back({EdgeKind::RoadConnectivity, "b1", "road"});
    g.edges.push_back({EdgeKind::RoadConnectivity, "road", "b1"});
    auto r = validate_graph(g);
    std::vector<std::string> codes;
    for (const auto& v : r.violations) codes.push_back(v.code);
    for (const char* expected : {"patch_out_of_range", "non_countable_class", "duplicate_id", "self_edge",
                                 "bad_proximity_edge", "bad_road_edge", "duplicate_edge"}) {
      CHECK_MESSAGE(std::count(codes.begin(), codes.end(), expected) >= 1, expected);
    }
  }

  SUBCASE("node cap") {
    SceneGraph g = road_only();
    for (int i = 0; i < kMaxGraphNodes; ++i) g.instances.push_back({"n" + std::to_string(i), SemanticClass::Pole, {}});
    auto r = validate_graph(g);
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].code == "too_many_nodes");
  }

  SUBCASE("missing road") {
    SceneGraph g;
    auto r = validate_graph(g);
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].code == "missing_road");
  }
}

TEST_CASE("adjacency") {
  SUBCASE("complete 3-node graph") {
    SceneGraph g = road_only();
    g.instances = {{"a", SemanticClass::Vehicle, PatchPos{0, 0}}, {"b", SemanticClass::Pole, PatchPos{0, 1}}};
    g.edges = {{EdgeKind::PhysicalProximity, "a", "b"},
               {EdgeKind::RoadConnectivity, "a", "road"},
               {EdgeKind::RoadConnectivity, "b", "road"}};
    auto A = adjacency(g, {"a", "b", "road"});
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) CHECK(A(i, j) == (i == j ? 0 : 1));
    }
  }

  SUBCASE("no edges gives zero matrix") {
    SceneGraph g = road_only();
    g.instances = {{"a", SemanticClass::Vehicle, {}}};
    auto A = adjacency(g, g.node_ids());
    CHECK(std::all_of(A.data.begin(), A.data.end(), [](auto v) { return v == 0; }));
  }

  SUBCASE("ordering errors") {
    SceneGraph g = road_only();
    g.instances = {{"a", SemanticClass::Vehicle, {}}};
    CHECK_THROWS_AS(adjacency(g, {"a", "zz"}), OrderingError);
    CHECK_THROWS_AS(adjacency(g, {"a"}), OrderingError);
    CHECK_THROWS_AS(adjacency(g, {"a", "a"}), OrderingError);
  }

  SUBCASE("property: symmetric, zero diagonal, permutation = P A P^T matches brute force") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      SceneGraph g = random_graph(rng);
      REQUIRE(validate_graph(g).ok());
      auto order = g.node_ids();
      std::shuffle(order.begin(), order.end(), rng);
      auto A = adjacency(g, order);
      for (int i = 0; i < A.n; ++i) {
        CHECK(A(i, i) == 0);
        for (int j = 0; j < A.n; ++j) {
          REQUIRE(A(i, j) == A(j, i));
          REQUIRE(A(i, j) == brute_force_edge(g, order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]));
        }
      }
      auto base = adjacency(g, g.node_ids());
      auto ids = g.node_ids();
      for (int i = 0; i < A.n; ++i) {
        for (int j = 0; j < A.n; ++j) {
          auto pi = std::find(ids.begin(), ids.end(), order[static_cast<std::size_t>(i)]) - ids.begin();
          auto pj = std::find(ids.begin(), ids.end(), order[static_cast<std::size_t>(j)]) - ids.begin();
          REQUIRE(A(i, j) == base(static_cast<int>(pi), static_cast<int>(pj)));
        }
      }
    }
  }
}

TEST_CASE("json round trip") {
  SUBCASE("property over random graphs") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      SceneGraph g = random_graph(rng);
      g.meta = {{"seed", trial}};
      auto text = graph_to_json(g);
      SceneGraph back = json_from_text(text);
      REQUIRE(back == g);
      CHECK(graph_to_json(back) == text);
    }
  }

  SUBCASE("patch [7,7] survives") {
    SceneGraph g = road_only();
    g.instances.push_back({"v1", SemanticClass::Vehicle, PatchPos{7, 7}});
    auto back = json_from_text(graph_to_json(g));
    REQUIRE(back.instances.size() == 1);
    CHECK(back.instances[0].patch == PatchPos{7, 7});
  }

  SUBCASE("documented example parses") {
    auto g = json_from_text(R"({"road": {"type": "Crossroad"},
      "instances": [{"id": "v1", "class": "Vehicle", "patch": [3,4]}, {"id": "p1", "class": "Pedestrian", "patch": null}],
      "edges": [{"kind": "proximity", "a": "v1", "b": "p1"}]})");
    CHECK(validate_graph(g).ok());
    CHECK(g.road().type == RoadType::Crossroad);
    CHECK_FALSE(g.find_instance("p1")->patch.has_value());
  }

  SUBCASE("unknown class names the field") {
    try {
      json_from_text(R"({"road": {"type": "Crossroad"}, "instances": [{"id": "t", "class": "Tank"}]})");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.where() == "/instances/0/class");
      CHECK(std::string(e.what()).find("Tank") != std::string::npos);
    }
  }

  SUBCASE("malformed text") {
    CHECK_THROWS_AS(json_from_text("{\"road\": "), ParseError);
    CHECK_THROWS_AS(json_from_text(R"({"instances": []})"), ParseError);
    CHECK_THROWS_AS(json_from_text(R"({"road": {"type": "Ring"}})"), ParseError);
    CHECK_THROWS_AS(json_from_text(R"({"road": {"type": "Others"}, "instances": [{"id": "a", "class": "Pole", "patch": [1]}]})"),
                    ParseError);
  }

  SUBCASE("duplicate roads are representable") {
    auto g = json_from_text(R"({"road": [{"type": "Crossroad"}, {"type": "Others", "id": "r2"}]})");
    CHECK(g.roads.size() == 2);
    CHECK(validate_graph(g).violations.at(0).message == "duplicate road node");
    CHECK(json_from_text(graph_to_json(g)) == g);
  }
}
