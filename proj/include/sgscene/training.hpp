#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "sgscene/dataset.hpp"
#include "sgscene/pipeline.hpp"

namespace sgscene {

// Dataset in tensor form, built once per run.
struct TrainingData {
  std::vector<SceneGraph> graphs;
  torch::Tensor maps;    // (N, H_b, W_b) int64
  torch::Tensor scenes;  // (N, D, H, W) int64

  static TrainingData from_samples(const std::vector<SceneSample>& samples);
  std::size_t size() const { return graphs.size(); }
};

// Random decisions for one training batch, drawn in a fixed order from the phase RNG.
struct BatchPlan {
  std::vector<int64_t> indices;
  std::vector<std::set<std::string>> hidden;  // instance ids whose position feature is masked
  std::vector<bool> uncond;                   // condition replaced by zeros
  std::vector<int64_t> t;
  std::vector<std::uint64_t> noise_seeds;
};

BatchPlan plan_batch(std::mt19937_64& rng, const TrainingData& data, int batch_size, int T, double mask_rate,
                     double uncond_proportion);

struct PhaseReport {
  std::string phase;
  int steps = 0;
  std::vector<double> losses;  // total loss per step
  nlohmann::json extra = nlohmann::json::object();

  // Mean total loss over steps [from, to).
  double mean_loss(int from, int to) const;
};

// Which parts of the 2D objective a phase optimises.
struct JointPhase {
  std::string name = "joint";
  int steps = 0;
  bool train_encoder = true;  // otherwise CANE is computed under no_grad
  bool aux = true;            // add aux_weight * L_a (respecting the config's switches)
  bool conditional = true;    // false: every item uses the zero condition
  bool diffusion = true;      // false: aux-only encoder pre-training
  bool loc = false;           // add loc_loss on the instance rows
};

// One 2D optimisation step's loss terms on a fixed plan; exposed for switch-semantics tests.
struct JointLoss {
  torch::Tensor total;
  torch::Tensor diffusion;
  torch::Tensor aux_bce;
  torch::Tensor aux_ce;
  torch::Tensor loc;
};
JointLoss joint_loss(Pipeline& p, const TrainingData& data, const BatchPlan& plan, const JointPhase& phase);

PhaseReport train_2d_phase(Pipeline& p, const TrainingData& data, const JointPhase& phase);

// GNN + 2D diffusion from scratch with L_a + L_theta, unconditional mixing and feature masking.
PhaseReport train_joint(Pipeline& p, const TrainingData& data);
// Supervised patch CE for the localization head; encoder and denoisers are left untouched.
PhaseReport train_loc(Pipeline& p, const TrainingData& data);
PhaseReport train_scene3d(Pipeline& p, const TrainingData& data);
PhaseReport train_autoencoder(Pipeline& p, const TrainingData& data);

// 2D part of the system (encoder, 2D denoiser, LOC) trained with the configured strategy.
std::vector<PhaseReport> run_strategy(Pipeline& p, const TrainingData& data);

// Top-1 LOC accuracy over every instance with a known patch. hide_all masks every position
// feature, as at inference for position-free nodes.
double loc_accuracy(Pipeline& p, const TrainingData& data, bool hide_all);
// Per-voxel reconstruction accuracy of the autoencoder.
double autoencoder_accuracy(Pipeline& p, const torch::Tensor& scenes);

}  // namespace sgscene
