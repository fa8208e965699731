#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sgscene/metrics.hpp"
#include "sgscene/training.hpp"

namespace sgscene {

struct IouResult {
  double miou = 0.0;
  double ma = 0.0;
};

// IoU over classes present in either grid; accuracy over classes present in `reference`.
IouResult scene_iou(const VoxelScene& reference, const VoxelScene& prediction);

// Agreement between each scene and its autoencoder reconstruction, averaged over scenes.
// Throws std::logic_error when the pipeline's autoencoder is untrained.
IouResult miou_ma(Pipeline& p, const std::vector<VoxelScene>& scenes);

// Mean-pooled bottleneck features, one row per scene.
Eigen::MatrixXd autoencoder_features(Pipeline& p, const std::vector<VoxelScene>& scenes);

inline constexpr double kCovRegularization = 1e-6;
inline constexpr int kMinF3dScenes = 16;

// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with S + 1e-6 I and the square root
// taken through symmetric eigendecompositions (negative eigenvalues clamped to 0).
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
// Both sets need at least 16 scenes; rejects an untrained autoencoder.
double f3d(Pipeline& p, const std::vector<VoxelScene>& a, const std::vector<VoxelScene>& b);

struct MetricsReport {
  double mae = 0.0;
  std::map<std::string, double> per_class_mae;
  double jaccard = 0.0;
  double miou = 0.0;
  double ma = 0.0;
  double f3d = 0.0;
  int n_scenes = 0;
  nlohmann::json config = nlohmann::json::object();

  nlohmann::json to_json() const;
};

// Control metrics of `generated` against the graphs that conditioned them, plausibility via the
// autoencoder, and F3D against `real`.
MetricsReport evaluate_scenes(Pipeline& p, const std::vector<VoxelScene>& generated,
                              const std::vector<SceneGraph>& graphs, const std::vector<VoxelScene>& real);

// ---- ablations ----

// Each row is a full TrainConfig (as JSON) trained and evaluated independently.
struct AblationGrid {
  nlohmann::json base = nlohmann::json::object();
  std::vector<nlohmann::json> rows;  // overrides applied on top of `base`
};

// {"base": {...}, "configs": [{...}], "uncond_proportion": [...], "aux": [{"edge_recon": b,
// "node_cls": b}], "strategy": ["a", ...]}: explicit configs plus one row per value of each axis.
AblationGrid ablation_grid_from_json(const nlohmann::json& j);
// The three sweeps: unconditional proportion, auxiliary-task grid, training strategies.
AblationGrid default_ablation_grid();

struct AblationRow {
  nlohmann::json config;  // effective TrainConfig
  MetricsReport report;
};

struct AblationSetup {
  const TrainingData* train = nullptr;
  std::vector<SceneGraph> eval_graphs;
  std::vector<VoxelScene> real_scenes;  // F3D reference
  Pipeline* stages = nullptr;            // supplies the trained 3D denoiser and autoencoder
  std::uint64_t sample_seed = 0;
  std::function<void(const AblationRow&)> on_row;
};

std::vector<AblationRow> ablation_sweep(const AblationGrid& grid, const AblationSetup& setup);
std::string ablation_csv(const std::vector<AblationRow>& rows);
nlohmann::json ablation_json(const std::vector<AblationRow>& rows);

}  // namespace sgscene
