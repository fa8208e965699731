#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sgscene/scene_graph.hpp"
#include "sgscene/voxel.hpp"

namespace sgscene {

// Proximity threshold in BEV cells (a quarter of the map side).
inline constexpr double kDefaultProximity = 8.0;
inline constexpr int kMaxCountPerClass = 12;

struct GenParams {
  RoadType road_type = RoadType::StraightRoad;
  std::array<int, kNumCountable> counts{};  // indexed like kCountableClasses
  std::uint64_t seed = 0;
};

struct SceneSample {
  VoxelScene scene;
  SceneGraph graph;
  BevMap map;
};

// Deterministic procedural scene. Throws CapacityError when the requested instances cannot all
// be placed, std::invalid_argument for out-of-range counts.
SceneSample generate_scene(const GenParams& params, double delta_d = kDefaultProximity);

// Road type and counts (each uniform in [0, max_count]) drawn from `seed`.
GenParams random_gen_params(std::uint64_t seed, int max_count);

// random_gen_params + generate_scene, redrawing the parameters from a derived seed whenever the
// draw does not fit. `params_out`, when given, receives the parameters that succeeded.
SceneSample generate_random_sample(std::uint64_t seed, int max_count,
                                   GenParams* params_out = nullptr);

SceneGraph extract_graph(const VoxelScene& scene, double delta_d = kDefaultProximity);

// Counts border "arms" (cyclic border runs of road cells, length >= 4).
RoadType classify_road(const BevMask& mask);
// Cells whose column contains a Road voxel.
BevMask road_mask(const VoxelScene& scene);
// Road cells plus Vehicle cells (vehicles only ever stand on road).
BevMask road_mask(const BevMap& map);

// Top-most non-Free class of every column.
BevMap project_bev(const VoxelScene& scene);

// Symmetries of the horizontal plane. Rot90 is counter-clockwise; FlipH mirrors columns and
// FlipV mirrors rows.
enum class AugmentOp : std::uint8_t { Identity, Rot90, Rot180, Rot270, FlipH, FlipV };
inline constexpr std::array<AugmentOp, 6> kAllAugmentOps = {
    AugmentOp::Identity, AugmentOp::Rot90, AugmentOp::Rot180,
    AugmentOp::Rot270,   AugmentOp::FlipH, AugmentOp::FlipV};

std::pair<int, int> transform_cell(AugmentOp op, int y, int x, int n);
PatchPos augment_patch(AugmentOp op, PatchPos p);
VoxelScene augment_scene(const VoxelScene& scene, AugmentOp op);
BevMap augment_map(const BevMap& map, AugmentOp op);
BevMask augment_mask(const BevMask& mask, AugmentOp op);
SceneGraph augment_graph(const SceneGraph& graph, AugmentOp op);
SceneSample augment(const SceneSample& sample, AugmentOp op);

// One line of a dataset manifest (JSON lines). `source` names the producer ("synthetic"); other
// producers (e.g. a real-data converter) write the same record shape.
struct ManifestRecord {
  std::int64_t index = 0;
  std::uint64_t seed = 0;
  std::string scene;
  std::string graph;
  std::string map;
  std::string source = "synthetic";
};

// Writes n samples (seeds seed+i) under `dir` plus `dir`/manifest.jsonl; returns the manifest path.
std::string write_synthetic_dataset(const std::string& dir, int n, std::uint64_t seed,
                                    int max_count);
std::vector<ManifestRecord> read_manifest(const std::string& manifest_path);
// Paths in the manifest are resolved relative to the manifest's directory.
std::vector<SceneSample> load_dataset(const std::string& manifest_path);

// In-memory equivalent of write_synthetic_dataset + load_dataset.
std::vector<SceneSample> make_synthetic_dataset(int n, std::uint64_t seed, int max_count);

}  // namespace sgscene
