#include "sgscene/text2graph.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "sgscene/dataset.hpp"

namespace sgscene {

namespace {

std::vector<std::string> tokenize(const std::string& text) {
  std::string cleaned;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    cleaned.push_back(std::isalnum(u) || ch == '-' ? static_cast<char>(std::tolower(u)) : ' ');
  }
  std::istringstream in(cleaned);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::optional<int> number_word(const std::string& w) {
  static const std::map<std::string, int> kWords = {
      {"a", 1},    {"an", 1},    {"one", 1},   {"two", 2},   {"three", 3}, {"four", 4},    {"five", 5},
      {"six", 6},  {"seven", 7}, {"eight", 8}, {"nine", 9},  {"ten", 10},  {"eleven", 11}, {"twelve", 12},
      {"no", 0},   {"zero", 0}};
  if (auto it = kWords.find(w); it != kWords.end()) return it->second;
  if (!w.empty() && std::all_of(w.begin(), w.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    return std::stoi(w.substr(0, 3));
  }
  return std::nullopt;
}

std::optional<SemanticClass> noun_class(const std::string& w) {
  static const std::map<std::string, SemanticClass> kNouns = {
      {"car", SemanticClass::Vehicle},          {"cars", SemanticClass::Vehicle},
      {"vehicle", SemanticClass::Vehicle},      {"vehicles", SemanticClass::Vehicle},
      {"truck", SemanticClass::Vehicle},        {"trucks", SemanticClass::Vehicle},
      {"pedestrian", SemanticClass::Pedestrian}, {"pedestrians", SemanticClass::Pedestrian},
      {"person", SemanticClass::Pedestrian},    {"people", SemanticClass::Pedestrian},
      {"pole", SemanticClass::Pole},            {"poles", SemanticClass::Pole},
      {"lamp", SemanticClass::Pole},            {"lamps", SemanticClass::Pole},
      {"streetlight", SemanticClass::Pole},     {"streetlights", SemanticClass::Pole}};
  if (auto it = kNouns.find(w); it != kNouns.end()) return it->second;
  return std::nullopt;
}

RoadType road_from(const std::vector<std::string>& words) {
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto& w = words[i];
    if (w == "t-junction" || w == "junction" || (w == "t" && i + 1 < words.size() && words[i + 1] == "junction")) {
      return RoadType::TJunction;
    }
    if (w == "crossroad" || w == "crossroads" || w == "intersection" || w == "crossing") return RoadType::Crossroad;
    if (w == "bend" || w == "curve" || w == "turn") return RoadType::BendRoad;
    if (w == "straight") return RoadType::StraightRoad;
  }
  return RoadType::Others;
}

}  // namespace

SceneGraph MockTextToGraph::convert(const std::string& prompt) const {
  const auto words = tokenize(prompt);
  if (words.empty()) throw std::invalid_argument("empty prompt");

  std::array<int, kNumCountable> counts{};
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto cls = noun_class(words[i]);
    if (!cls) continue;
    int n = 1;
    if (i > 0) {
      if (auto num = number_word(words[i - 1])) n = *num;
    }
    auto& slot = counts[static_cast<std::size_t>(countable_index(*cls))];
    slot = std::min(kMaxCountPerClass, slot + n);
  }

  SceneGraph g;
  g.roads.push_back({"road", road_from(words)});
  static constexpr std::array<const char*, kNumCountable> kPrefix = {"veh", "ped", "pole"};
  for (std::size_t k = 0; k < kNumCountable; ++k) {
    for (int i = 0; i < counts[k]; ++i) {
      InstanceNode node{std::string(kPrefix[k]) + std::to_string(i), kCountableClasses[k], std::nullopt};
      g.edges.push_back({EdgeKind::RoadConnectivity, node.id, "road"});
      g.instances.push_back(std::move(node));
    }
  }
  g.meta = {{"source", "text2graph"}, {"adapter", name()}, {"prompt", prompt}};
  g.canonicalize();
  return g;
}

}  // namespace sgscene
