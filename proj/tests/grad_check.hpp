#pragma once

#include <functional>
#include <random>

#include <torch/torch.h>

namespace sgscene::testing {

// Relative error ||analytic - numeric|| / ||numeric|| over up to `samples` entries of `param`
// (central differences). `loss` must rebuild the graph each call.
inline double grad_rel_error(const std::function<torch::Tensor()>& loss, torch::Tensor param, int samples,
                             double h = 1e-6, std::uint64_t seed = 0) {
  if (param.grad().defined()) param.mutable_grad().zero_();
  loss().backward();
  auto analytic = param.grad().detach().flatten().clone();
  std::mt19937_64 rng(seed);
  const int64_t n = param.numel();
  std::vector<int64_t> picks;
  if (n <= samples) {
    for (int64_t i = 0; i < n; ++i) picks.push_back(i);
  } else {
    for (int i = 0; i < samples; ++i) picks.push_back(static_cast<int64_t>(rng() % static_cast<uint64_t>(n)));
  }
  double num = 0.0, den = 0.0;
  torch::NoGradGuard no_grad;
  auto flat = param.view({-1});
  for (auto i : picks) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + h;
    const double lp = loss().item<double>();
    flat[i] = orig - h;
    const double lm = loss().item<double>();
    flat[i] = orig;
    const double fd = (lp - lm) / (2 * h);
    num += std::pow(analytic[i].item<double>() - fd, 2);
    den += fd * fd;
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

}  // namespace sgscene::testing
