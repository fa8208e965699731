#include "sgscene/diffusion.hpp"

#include <mutex>
#include <stdexcept>

namespace sgscene {

namespace {

void check_t(const torch::Tensor& t, const DiffusionSchedule& sched) {
  if (t.dim() != 1) throw std::invalid_argument("t must be a 1-D tensor of timesteps");
  if (t.numel() == 0) return;
  if (t.min().item<int64_t>() < 1 || t.max().item<int64_t>() > sched.T) {
    throw std::out_of_range("timestep outside [1, " + std::to_string(sched.T) + "]");
  }
}

// (B, ...) int64 -> (B, N, c) one-hot of the given dtype.
torch::Tensor flat_one_hot(const torch::Tensor& x, int c, torch::ScalarType dtype) {
  return torch::one_hot(x.reshape({x.size(0), -1}), c).to(dtype);
}

}  // namespace

DiffusionSchedule schedule_from_betas(const std::vector<double>& betas, int c) {
  if (betas.empty()) throw std::invalid_argument("schedule needs T >= 1");
  if (c < 2) throw std::invalid_argument("schedule needs c >= 2");
  const int T = static_cast<int>(betas.size());
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  DiffusionSchedule s{T, c, betas, torch::zeros({T + 1, c, c}, opts), torch::zeros({T + 1, c, c}, opts)};
  auto eye = torch::eye(c, opts);
  auto uniform = torch::full({c, c}, 1.0 / c, opts);
  s.Q[0] = eye;
  s.Qbar[0] = eye;
  for (int t = 1; t <= T; ++t) {
    const double b = betas[static_cast<std::size_t>(t - 1)];
    if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("beta outside [0, 1]");
    s.Q[t] = (1.0 - b) * eye + b * uniform;
    s.Qbar[t] = torch::matmul(s.Qbar[t - 1], s.Q[t]);
  }
  return s;
}

DiffusionSchedule build_schedule(int T, int c, KernelKind kind) {
  if (T < 1) throw std::invalid_argument("schedule needs T >= 1");
  if (kind != KernelKind::Uniform) throw std::invalid_argument("unsupported kernel");
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) betas[static_cast<std::size_t>(t)] = T == 1 ? 1.0 : 0.02 + (1.0 - 0.02) * t / (T - 1);
  return schedule_from_betas(betas, c);
}

at::Generator make_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

std::vector<at::Generator> make_generators(const std::vector<std::uint64_t>& seeds) {
  std::vector<at::Generator> out;
  out.reserve(seeds.size());
  for (auto s : seeds) out.push_back(make_generator(s));
  return out;
}

torch::Tensor sample_categorical(const torch::Tensor& probs, std::vector<at::Generator>& gens) {
  const int64_t B = probs.size(0);
  if (static_cast<int64_t>(gens.size()) != B) throw std::invalid_argument("one generator per batch item required");
  const int64_t c = probs.size(-1);
  auto p = probs.detach().to(torch::kFloat64).reshape({B, -1, c});
  if (!torch::isfinite(p).all().item<bool>() || (p < 0).any().item<bool>()) {
    throw std::domain_error("sample_categorical: non-finite or negative probabilities");
  }
  auto cdf = p.cumsum(-1);
  std::vector<torch::Tensor> u;
  u.reserve(static_cast<std::size_t>(B));
  for (int64_t b = 0; b < B; ++b) {
    u.push_back(torch::rand({p.size(1), 1}, gens[static_cast<std::size_t>(b)], torch::kFloat64));
  }
  // Scale by the row total so rounding in the cdf never pushes a draw past the last class.
  auto draw = torch::stack(u) * cdf.narrow(-1, c - 1, 1);
  auto idx = (cdf <= draw).sum(-1).clamp_max(c - 1);
  auto out_shape = probs.sizes().vec();
  out_shape.pop_back();
  return idx.reshape(out_shape);
}

torch::Tensor q_sample(const torch::Tensor& x0, const torch::Tensor& t, const DiffusionSchedule& sched,
                       std::vector<at::Generator>& gens) {
  check_t(t, sched);
  auto rows = torch::bmm(flat_one_hot(x0, sched.c, torch::kFloat64), sched.Qbar.index_select(0, t));
  auto shape = x0.sizes().vec();
  shape.push_back(sched.c);
  return sample_categorical(rows.reshape(shape), gens);
}

torch::Tensor posterior(const torch::Tensor& x_t, const torch::Tensor& x0_probs, const torch::Tensor& t,
                        const DiffusionSchedule& sched) {
  check_t(t, sched);
  const int c = sched.c;
  if (x0_probs.size(-1) != c || x0_probs.dim() != x_t.dim() + 1) {
    throw std::invalid_argument("x0_probs must be x_t's shape plus a class axis of size c");
  }
  const auto dtype = x0_probs.scalar_type();
  const int64_t B = x_t.size(0);
  auto probs = x0_probs.reshape({B, -1, c});
  auto onehot = flat_one_hot(x_t, c, dtype);
  auto Qt = sched.Q.index_select(0, t).to(dtype);
  auto Qbar_t = sched.Qbar.index_select(0, t).to(dtype);
  auto Qbar_prev = sched.Qbar.index_select(0, t - 1).to(dtype);

  // fwd[b, n, i] = Q_t[i, x_t]; marg[b, n, k] = Qbar_t[k, x_t].
  auto fwd = torch::bmm(onehot, Qt.transpose(1, 2));
  auto marg = torch::bmm(onehot, Qbar_t.transpose(1, 2));
  // Each x0 hypothesis contributes its normalized forward posterior, weighted by its probability.
  auto safe = torch::where(marg > 0, marg, torch::ones_like(marg));
  auto w = torch::where(marg > 0, probs / safe, torch::zeros_like(probs));
  auto unnorm = torch::bmm(w, Qbar_prev) * fwd;
  auto total = unnorm.sum(-1, true);
  auto out = torch::where(total > 0, unnorm / torch::where(total > 0, total, torch::ones_like(total)), onehot);

  auto at_one = (t == 1).view({B, 1, 1});
  out = torch::where(at_one, probs, out);
  return out.reshape(x0_probs.sizes());
}

DiffusionLoss diffusion_loss(const torch::Tensor& x0, const torch::Tensor& x_t, const torch::Tensor& t,
                             const torch::Tensor& logits, const DiffusionSchedule& sched, double lambda) {
  const int c = sched.c;
  const int64_t B = x0.size(0);
  auto log_p0 = torch::log_softmax(logits, -1);
  auto target = torch::one_hot(x0, c).to(logits.scalar_type());
  auto q = posterior(x_t, target, t, sched).reshape({B, -1, c});
  auto p = posterior(x_t, log_p0.exp(), t, sched).reshape({B, -1, c});
  auto log_q = torch::log(torch::where(q > 0, q, torch::ones_like(q)));
  auto log_p = torch::log(p.clamp_min(1e-30));
  auto kl = torch::where(q > 0, q * (log_q - log_p), torch::zeros_like(q)).sum() / static_cast<double>(B);
  auto ce = -(target * log_p0).sum() / static_cast<double>(B);
  return {kl + lambda * ce, kl, ce};
}

torch::Tensor p_sample_loop(const Denoiser& denoiser, const std::vector<int64_t>& shape,
                            const DiffusionSchedule& sched, std::vector<at::Generator>& gens) {
  torch::NoGradGuard no_grad;
  const int64_t B = shape.at(0);
  if (static_cast<int64_t>(gens.size()) != B) throw std::invalid_argument("one generator per batch item required");
  auto prob_shape = shape;
  prob_shape.push_back(sched.c);
  auto x = sample_categorical(torch::full(prob_shape, 1.0 / sched.c, torch::kFloat64), gens);
  for (int step = sched.T; step >= 1; --step) {
    auto t = torch::full({B}, step, torch::kInt64);
    auto logits = denoiser(x, t);
    auto probs = torch::softmax(logits.to(torch::kFloat64), -1);
    x = sample_categorical(posterior(x, probs, t, sched), gens);
  }
  return x;
}

}  // namespace sgscene
