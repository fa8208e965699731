#pragma once

#include <functional>
#include <vector>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

namespace sgscene {

enum class KernelKind { Uniform };

// Categorical forward process. Q and Qbar are (T+1, c, c) float64 tensors; index 0 holds the
// identity so that Qbar[t] = Qbar[t-1] Q[t] holds for t = 1..T.
struct DiffusionSchedule {
  int T = 0;
  int c = 0;
  std::vector<double> betas;  // betas[t-1] is beta_t
  torch::Tensor Q;
  torch::Tensor Qbar;
};

// Linear beta from 0.02 to 1.0.
DiffusionSchedule build_schedule(int T, int c, KernelKind kind = KernelKind::Uniform);
DiffusionSchedule schedule_from_betas(const std::vector<double>& betas, int c);

// Generators for batched sampling, one per batch item so a sample does not depend on what else
// shares its batch.
std::vector<at::Generator> make_generators(const std::vector<std::uint64_t>& seeds);
at::Generator make_generator(std::uint64_t seed);

// Draws one class per cell. probs: (B, ..., c), rows summing to 1. Returns (B, ...) int64.
// Non-finite or negative entries throw std::domain_error.
torch::Tensor sample_categorical(const torch::Tensor& probs, std::vector<at::Generator>& gens);

// x0: (B, ...) int64 class grid; t: (B) int64 in [1, T]. Each cell drawn from Qbar_t[x0].
torch::Tensor q_sample(const torch::Tensor& x0, const torch::Tensor& t, const DiffusionSchedule& sched,
                       std::vector<at::Generator>& gens);

// Reverse step distribution E_{x0 ~ x0_probs} q(x_{t-1} | x_t, x0).
// x_t: (B, ...) int64; x0_probs: (B, ..., c); t: (B) int64 in [1, T]. Output has x0_probs's dtype.
// Items with t = 1 get x0_probs back unchanged.
torch::Tensor posterior(const torch::Tensor& x_t, const torch::Tensor& x0_probs, const torch::Tensor& t,
                        const DiffusionSchedule& sched);

struct DiffusionLoss {
  torch::Tensor total;  // kl + lambda * ce
  torch::Tensor kl;
  torch::Tensor ce;
};

// KL(q(x_{t-1} | x_t, x0) || p(x_{t-1} | x_t)) + lambda * CE(x0, logits), each summed over cells
// and averaged over the batch. logits: (B, ..., c), channel last.
DiffusionLoss diffusion_loss(const torch::Tensor& x0, const torch::Tensor& x_t, const torch::Tensor& t,
                             const torch::Tensor& logits, const DiffusionSchedule& sched, double lambda);

// (x_t, t) -> x0 logits, channel last.
using Denoiser = std::function<torch::Tensor(const torch::Tensor& x_t, const torch::Tensor& t)>;

// Ancestral sampling from x_T ~ uniform. `shape` is (B, ...) and gens.size() must equal B.
torch::Tensor p_sample_loop(const Denoiser& denoiser, const std::vector<int64_t>& shape,
                            const DiffusionSchedule& sched, std::vector<at::Generator>& gens);

}  // namespace sgscene
