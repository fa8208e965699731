#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "sgscene/allocation.hpp"
#include "sgscene/dataset.hpp"
#include "sgscene/diffusion.hpp"
#include "sgscene/encoder.hpp"
#include "sgscene/networks.hpp"

namespace sgscene {

enum class Strategy { A, B, C, D };
std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& s);

struct TrainConfig {
  double uncond_proportion = 0.10;
  double feature_mask_rate = 0.30;
  double tau = kDefaultTau;
  double aux_weight = 1.0;
  double lambda = 0.001;
  double lr = 1e-3;
  double grad_clip = 1.0;  // global gradient-norm bound per step; 0 disables
  int T = 100;
  int batch_size = 16;
  int batch_size_3d = 4;
  int steps_joint = 4000;
  int steps_pretrain = 500;  // GNN / LOC / unconditional pre-training phases of strategies a and c
  int steps_loc = 20000;
  int steps_scene3d = 1000;
  int steps_ae = 400;
  std::uint64_t seed = 0;
  bool edge_recon = true;
  bool node_cls = true;
  Strategy strategy = Strategy::D;
  int log_every = 25;
  std::string metrics_log;  // JSON-lines path; empty disables logging

  nlohmann::json to_json() const;
  // Unknown keys and out-of-range values throw std::invalid_argument.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& defaults);
  void validate() const;
};

// Every trainable part of the system plus the schedule and config it was trained with.
class Pipeline {
 public:
  // Parameters are initialised from torch's global generator seeded with cfg.seed.
  Pipeline() : Pipeline(TrainConfig()) {}
  explicit Pipeline(const TrainConfig& cfg);
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;
  Pipeline(Pipeline&&) = default;
  Pipeline& operator=(Pipeline&&) = default;

  TrainConfig config;
  DiffusionSchedule schedule;
  GraphEncoder encoder{nullptr};
  LocHead loc{nullptr};
  MapDenoiser map_denoiser{nullptr};
  SceneDenoiser scene_denoiser{nullptr};
  SceneAutoencoder autoencoder{nullptr};
  // Which groups ("encoder", "loc", "map", "scene", "ae") have been trained.
  std::map<std::string, bool> trained;
  std::string rng_state;  // std::mt19937_64 state of the last training phase

  // Named module groups in checkpoint order.
  std::vector<std::pair<std::string, torch::nn::Module*>> groups();
  std::vector<std::pair<std::string, const torch::nn::Module*>> groups() const;
  bool is_trained(const std::string& group) const;
};

// Copies one group's parameters and trained flag between pipelines.
void copy_group(const Pipeline& from, Pipeline& to, const std::string& group);

// SGCKPT01 | u64 header length | JSON header | raw little-endian blocks.
void save_checkpoint(const Pipeline& p, const std::string& path);
std::string checkpoint_bytes(const Pipeline& p);
Pipeline load_checkpoint(const std::string& path);
Pipeline checkpoint_from_bytes(const std::string& bytes);

// FNV-1a digest of a module's parameter names and bytes, hex encoded.
std::string params_digest(const torch::nn::Module& m);
std::string file_digest(const std::string& bytes);

// Single worker, deterministic kernels.
void init_runtime();

// SplitMix64 of (seed, stream): independent seeds for the stages of one request.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// ---- tensor conversions ----
torch::Tensor maps_tensor(const std::vector<BevMap>& maps);             // (B, H, W) int64
torch::Tensor scenes_tensor(const std::vector<VoxelScene>& scenes);     // (B, D, H, W) int64
std::vector<BevMap> maps_from_tensor(const torch::Tensor& t);
std::vector<VoxelScene> scenes_from_tensor(const torch::Tensor& t);

// ---- sampling ----
struct MapCondition {
  torch::Tensor bem;     // (B, C, H_b, W_b)
  torch::Tensor global;  // (B, C)
};

// Encodes the graphs, localizes position-free instances with gens[b] and assembles the BEM.
MapCondition build_condition(Pipeline& p, const std::vector<SceneGraph>& graphs, double tau,
                             std::vector<at::Generator>& gens, std::vector<std::vector<PatchPos>>* placed = nullptr);

// Conditional (or, with conditional = false, unconditional) 2D samples, one seed per graph.
std::vector<BevMap> sample_maps(Pipeline& p, const std::vector<SceneGraph>& graphs,
                                const std::vector<std::uint64_t>& seeds, double tau, bool conditional = true);
std::vector<BevMap> sample_maps_unconditional(Pipeline& p, const std::vector<std::uint64_t>& seeds);
std::vector<VoxelScene> sample_scenes(Pipeline& p, const std::vector<BevMap>& maps,
                                      const std::vector<std::uint64_t>& seeds);
BevMap sample_map(Pipeline& p, const SceneGraph& graph, std::uint64_t seed, double tau);
VoxelScene sample_scene(Pipeline& p, const BevMap& map, std::uint64_t seed);

// Runs `fn` over [0, n) in chunks of `chunk`.
template <typename Fn>
void for_chunks(std::size_t n, std::size_t chunk, Fn&& fn) {
  for (std::size_t start = 0; start < n; start += chunk) fn(start, std::min(n, start + chunk));
}

}  // namespace sgscene
