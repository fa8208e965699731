#pragma once

#include <torch/torch.h>

#include "sgscene/encoder.hpp"
#include "sgscene/palette.hpp"

namespace sgscene {

// GroupNorm, SiLU, conv, twice, with a residual path. Dim selects 2D or 3D convolutions.
template <int Dim>
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int in_ch, int out_ch);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::AnyModule conv1_, conv2_, skip_;
  bool has_skip_ = false;
};
using ResBlock2dImpl = ResBlockImpl<2>;
using ResBlock3dImpl = ResBlockImpl<3>;
TORCH_MODULE(ResBlock2d);
TORCH_MODULE(ResBlock3d);

// x0 predictor for BEV maps. Input channels: one-hot x_t (c) | BEM (C) | t / T (1) | (y, x) (2). A global
// condition vector (the road node's CANE row) enters as a learned per-channel bias after the
// first convolution; zero BEM and zero global vector form the unconditional mode.
class MapDenoiserImpl : public torch::nn::Module {
 public:
  explicit MapDenoiserImpl(int num_steps, int base = 32);
  // x_t (B, H, W) int64; t (B) int64; bem (B, C, H, W); global (B, C). Returns (B, c, H, W).
  torch::Tensor forward(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& bem,
                        const torch::Tensor& global);

  int num_steps;

 private:
  torch::nn::Conv2d in_conv_{nullptr}, down1_{nullptr}, down2_{nullptr}, up2_{nullptr}, up1_{nullptr},
      out_conv_{nullptr};
  torch::nn::Linear cond_{nullptr};
  ResBlock2d enc1_{nullptr}, enc2_{nullptr}, mid1_{nullptr}, mid2_{nullptr}, dec2_{nullptr}, dec1_{nullptr};
  torch::nn::GroupNorm out_norm_{nullptr};
};
TORCH_MODULE(MapDenoiser);

// x0 predictor for voxel scenes. Input channels: one-hot z_t (c) | up-scaled map one-hot
// broadcast along depth (c) | t / T (1) | normalised height z / (D - 1) (1).
class SceneDenoiserImpl : public torch::nn::Module {
 public:
  explicit SceneDenoiserImpl(int num_steps, int base = 16);
  // z_t (B, D, H, W) int64; t (B) int64; cond (B, c, H, W) float. Returns (B, c, D, H, W).
  torch::Tensor forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& cond);

  int num_steps;

 private:
  torch::nn::Conv3d in_conv_{nullptr}, down1_{nullptr}, down2_{nullptr}, up2_{nullptr}, up1_{nullptr},
      out_conv_{nullptr};
  ResBlock3d enc1_{nullptr}, enc2_{nullptr}, mid_{nullptr}, dec2_{nullptr}, dec1_{nullptr};
  torch::nn::GroupNorm out_norm_{nullptr};
};
TORCH_MODULE(SceneDenoiser);

inline constexpr int kAeFeatureDim = 128;

// 3D convolutional autoencoder over one-hot scenes; the bottleneck is (128, D/4, H/4, W/4).
class SceneAutoencoderImpl : public torch::nn::Module {
 public:
  SceneAutoencoderImpl();
  torch::Tensor encode(const torch::Tensor& scenes);  // (B, D, H, W) int64 -> bottleneck
  torch::Tensor decode(const torch::Tensor& z);       // -> (B, c, D, H, W) logits
  torch::Tensor forward(const torch::Tensor& scenes) { return decode(encode(scenes)); }
  // Mean-pooled bottleneck, (B, 128).
  torch::Tensor features(const torch::Tensor& scenes);

 private:
  torch::nn::Sequential enc_{nullptr}, dec_{nullptr};
};
TORCH_MODULE(SceneAutoencoder);

// Nearest-neighbour resampling of a (B, H_b, W_b) class map to (B, c, H, W) one-hot.
torch::Tensor upscale_map(const torch::Tensor& maps, int64_t height, int64_t width);

}  // namespace sgscene
