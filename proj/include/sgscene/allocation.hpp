#pragma once

#include <vector>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include "sgscene/encoder.hpp"

namespace sgscene {

inline constexpr double kDefaultTau = 2.0;

// (H_b, W_b) float mask of one patch's 4x4 block.
torch::Tensor patch_mask(PatchPos p);

// BEM for one graph, channel first: (C, H_b, W_b). rows: (M, C) instance embeddings;
// patches: one per row. Overlapping patches sum.
torch::Tensor assemble_bem(const torch::Tensor& rows, const std::vector<PatchPos>& patches);
// Batched: patch (M) int64 in [0, 64), graph (M) int64 in [0, B). Returns (B, C, H_b, W_b).
torch::Tensor assemble_bem(const torch::Tensor& rows, const torch::Tensor& patch, const torch::Tensor& graph,
                           int64_t num_graphs);

// MLP from a CANE row to 64 patch logits.
class LocHeadImpl : public torch::nn::Module {
 public:
  LocHeadImpl();
  torch::Tensor forward(const torch::Tensor& cane_rows);

  torch::nn::Sequential mlp{nullptr};
};
TORCH_MODULE(LocHead);

// Standard Gumbel noise -log(-log U) with the given shape, float64.
torch::Tensor gumbel_noise(at::IntArrayRef shape, at::Generator& gen);

// Hard Gumbel-max draw argmax(logits / tau + G) over the last axis, i.e. one sample from
// softmax(logits / tau). Returns the indices.
torch::Tensor gumbel_argmax(const torch::Tensor& logits, double tau, at::Generator& gen);

// Straight-through sample: one-hot forward value, gradient of softmax((logits / tau + G)).
torch::Tensor gumbel_softmax_st(const torch::Tensor& logits, double tau, at::Generator& gen);

// Samples a patch for one CANE row.
PatchPos localize(const torch::Tensor& cane_row, LocHead& head, double tau, at::Generator& gen);

// Mean cross-entropy of head logits against ground-truth patch indices (M).
torch::Tensor loc_loss(LocHead& head, const torch::Tensor& cane_rows, const torch::Tensor& gt_patch);

}  // namespace sgscene
