#pragma once

#include <memory>
#include <string>

#include "sgscene/scene_graph.hpp"

namespace sgscene {

// Turns a free-text prompt into a scene graph. Implementations throw std::invalid_argument for
// prompts they cannot use (empty text included).
class TextToGraphAdapter {
 public:
  virtual ~TextToGraphAdapter() = default;
  virtual SceneGraph convert(const std::string& prompt) const = 0;
  virtual std::string name() const = 0;
};

// Offline keyword rules:
//   road: "straight" -> StraightRoad; "t-junction"/"t junction"/"junction" -> TJunction;
//         "crossroad"/"intersection"/"crossing" -> Crossroad; "bend"/"curve"/"turn" -> BendRoad;
//         otherwise Others.
//   counts: "<number> <noun>" where number is a digit string, "a"/"an", or one..twelve, and the
//         noun is car/vehicle/truck (Vehicle), pedestrian/person/people (Pedestrian) or
//         pole/lamp/streetlight (Pole), singular or plural. A bare noun counts once.
// Instances get no patch and one road edge each.
class MockTextToGraph : public TextToGraphAdapter {
 public:
  SceneGraph convert(const std::string& prompt) const override;
  std::string name() const override { return "mock-keywords"; }
};

}  // namespace sgscene
