// Seconds per training step and per forward pass of the denoisers and the autoencoder, one thread.
#include <chrono>
#include <functional>
#include <iostream>

#include "sgscene/networks.hpp"
#include "sgscene/voxel.hpp"

using namespace sgscene;

namespace {

double seconds_per_call(const std::function<void()>& fn, int reps = 3) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
}

void report(const char* what, int B, double s) { std::cout << what << " B=" << B << ": " << s << " s\n"; }

}  // namespace

int main() {
  at::set_num_threads(1);
  MapDenoiser map_net(100);
  SceneDenoiser scene_net(100);
  SceneAutoencoder ae;
  torch::optim::Adam map_opt(map_net->parameters(), 1e-3);
  torch::optim::Adam scene_opt(scene_net->parameters(), 1e-3);

  for (int B : {1, 16}) {
    auto x = torch::randint(0, kNumClasses, {int64_t{B}, kBevH, kBevW}, torch::kInt64);
    auto t = torch::ones({B}, torch::kInt64);
    auto bem = torch::randn({int64_t{B}, kEmbedDim, kBevH, kBevW});
    auto global = torch::randn({int64_t{B}, kEmbedDim});
    report("2d train", B, seconds_per_call([&] {
             map_opt.zero_grad();
             map_net(x, t, bem, global).sum().backward();
             map_opt.step();
           }));
    torch::NoGradGuard ng;
    report("2d forward", B, seconds_per_call([&] { map_net(x, t, bem, global); }));
  }

  for (int B : {1, 4}) {
    auto z = torch::randint(0, kNumClasses, {int64_t{B}, kSceneD, kSceneH, kSceneW}, torch::kInt64);
    auto t = torch::ones({B}, torch::kInt64);
    auto cond = torch::randn({int64_t{B}, kNumClasses, kSceneH, kSceneW});
    report("3d train", B, seconds_per_call([&] {
             scene_opt.zero_grad();
             scene_net(z, t, cond).sum().backward();
             scene_opt.step();
           }));
    torch::NoGradGuard ng;
    report("3d forward", B, seconds_per_call([&] { scene_net(z, t, cond); }));
    report("autoencoder forward", B, seconds_per_call([&] { ae(z); }));
  }
}
