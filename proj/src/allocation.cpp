#include "sgscene/allocation.hpp"

#include <stdexcept>

#include "sgscene/errors.hpp"
#include "sgscene/voxel.hpp"

namespace sgscene {

torch::Tensor patch_mask(PatchPos p) {
  if (!p.in_range()) throw RangeError("patch outside the 8x8 grid");
  auto m = torch::zeros({kBevH, kBevW});
  m.narrow(0, p.row * kPatchCells, kPatchCells).narrow(1, p.col * kPatchCells, kPatchCells).fill_(1.0);
  return m;
}

torch::Tensor assemble_bem(const torch::Tensor& rows, const torch::Tensor& patch, const torch::Tensor& graph,
                           int64_t num_graphs) {
  if (rows.dim() != 2 || rows.size(0) != patch.size(0) || patch.size(0) != graph.size(0)) {
    throw ShapeError("assemble_bem: rows, patches and graph ids must align");
  }
  const int64_t C = rows.size(1);
  if (patch.numel() > 0 && (patch.min().item<int64_t>() < 0 || patch.max().item<int64_t>() >= kPatchCount)) {
    throw RangeError("assemble_bem: patch index outside [0, 64)");
  }
  // Sum rows per (graph, patch), then blow every patch up to its 4x4 block.
  auto slots = torch::zeros({num_graphs * kPatchCount, C}, rows.options());
  slots = slots.index_add(0, graph * kPatchCount + patch, rows);
  auto grid = slots.view({num_graphs, kPatchGrid, kPatchGrid, C});
  grid = grid.repeat_interleave(kPatchCells, 1).repeat_interleave(kPatchCells, 2);
  return grid.permute({0, 3, 1, 2}).contiguous();
}

torch::Tensor assemble_bem(const torch::Tensor& rows, const std::vector<PatchPos>& patches) {
  std::vector<int64_t> idx;
  for (const auto& p : patches) {
    if (!p.in_range()) throw RangeError("assemble_bem: patch outside the 8x8 grid");
    idx.push_back(p.index());
  }
  const auto M = static_cast<int64_t>(idx.size());
  if (rows.size(0) != M) throw std::invalid_argument("assemble_bem: one patch per embedding row required");
  return assemble_bem(rows, torch::tensor(idx, torch::kInt64).view({M}), torch::zeros({M}, torch::kInt64), 1)[0];
}

LocHeadImpl::LocHeadImpl() {
  mlp = register_module("mlp", torch::nn::Sequential(torch::nn::Linear(kEmbedDim, kEmbedDim), torch::nn::ELU(),
                                                     torch::nn::Linear(kEmbedDim, kPatchCount)));
}

torch::Tensor LocHeadImpl::forward(const torch::Tensor& cane_rows) { return mlp->forward(cane_rows); }

torch::Tensor gumbel_noise(at::IntArrayRef shape, at::Generator& gen) {
  auto u = torch::rand(shape, gen, torch::kFloat64);
  return -torch::log(-torch::log(u));
}

torch::Tensor gumbel_argmax(const torch::Tensor& logits, double tau, at::Generator& gen) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel temperature must be positive");
  auto g = gumbel_noise(logits.sizes(), gen);
  return (logits.detach().to(torch::kFloat64) / tau + g).argmax(-1);
}

torch::Tensor gumbel_softmax_st(const torch::Tensor& logits, double tau, at::Generator& gen) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel temperature must be positive");
  auto g = gumbel_noise(logits.sizes(), gen).to(logits.scalar_type());
  auto soft = torch::softmax(logits / tau + g, -1);
  auto hard = torch::one_hot(soft.argmax(-1), logits.size(-1)).to(logits.scalar_type());
  return hard - soft.detach() + soft;
}

PatchPos localize(const torch::Tensor& cane_row, LocHead& head, double tau, at::Generator& gen) {
  torch::NoGradGuard no_grad;
  auto logits = head->forward(cane_row.view({1, -1}))[0];
  return PatchPos::from_index(static_cast<int>(gumbel_argmax(logits, tau, gen).item<int64_t>()));
}

torch::Tensor loc_loss(LocHead& head, const torch::Tensor& cane_rows, const torch::Tensor& gt_patch) {
  if (cane_rows.size(0) == 0) return torch::zeros({}, cane_rows.options());
  return torch::nn::functional::cross_entropy(head->forward(cane_rows), gt_patch);
}

}  // namespace sgscene
