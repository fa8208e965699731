#include "sgscene/networks.hpp"

#include "sgscene/errors.hpp"

namespace sgscene {

namespace {

template <int Dim>
torch::nn::AnyModule conv(int in, int out, int k, int stride = 1) {
  if constexpr (Dim == 2) {
    return torch::nn::AnyModule(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2)));
  } else {
    return torch::nn::AnyModule(torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, k).stride(stride).padding(k / 2)));
  }
}

torch::nn::GroupNorm group_norm(int ch) { return torch::nn::GroupNorm(torch::nn::GroupNormOptions(std::min(8, ch), ch)); }

torch::Tensor upsample2(const torch::Tensor& x) {
  std::vector<double> scale(static_cast<std::size_t>(x.dim() - 2), 2.0);
  return torch::nn::functional::interpolate(
      x, torch::nn::functional::InterpolateFuncOptions().scale_factor(scale).mode(torch::kNearest));
}

}  // namespace

template <int Dim>
ResBlockImpl<Dim>::ResBlockImpl(int in_ch, int out_ch) {
  norm1_ = register_module("norm1", group_norm(in_ch));
  norm2_ = register_module("norm2", group_norm(out_ch));
  conv1_ = conv<Dim>(in_ch, out_ch, 3);
  conv2_ = conv<Dim>(out_ch, out_ch, 3);
  register_module("conv1", conv1_.ptr());
  register_module("conv2", conv2_.ptr());
  if (in_ch != out_ch) {
    skip_ = conv<Dim>(in_ch, out_ch, 1);
    register_module("skip", skip_.ptr());
    has_skip_ = true;
  }
}

template <int Dim>
torch::Tensor ResBlockImpl<Dim>::forward(const torch::Tensor& x) {
  auto h = conv1_.forward(torch::silu(norm1_(x)));
  h = conv2_.forward(torch::silu(norm2_(h)));
  return h + (has_skip_ ? skip_.forward(x) : x);
}

template class ResBlockImpl<2>;
template class ResBlockImpl<3>;

MapDenoiserImpl::MapDenoiserImpl(int steps, int base) : num_steps(steps) {
  using torch::nn::Conv2d;
  using torch::nn::Conv2dOptions;
  const int in_ch = kNumClasses + kEmbedDim + 1 + 2;
  in_conv_ = register_module("in_conv", Conv2d(Conv2dOptions(in_ch, base, 3).padding(1)));
  cond_ = register_module("cond", torch::nn::Linear(kEmbedDim, base));
  enc1_ = register_module("enc1", ResBlock2d(base, base));
  down1_ = register_module("down1", Conv2d(Conv2dOptions(base, 2 * base, 3).stride(2).padding(1)));
  enc2_ = register_module("enc2", ResBlock2d(2 * base, 2 * base));
  down2_ = register_module("down2", Conv2d(Conv2dOptions(2 * base, 4 * base, 3).stride(2).padding(1)));
  mid1_ = register_module("mid1", ResBlock2d(4 * base, 4 * base));
  mid2_ = register_module("mid2", ResBlock2d(4 * base, 4 * base));
  up2_ = register_module("up2", Conv2d(Conv2dOptions(4 * base, 2 * base, 3).padding(1)));
  dec2_ = register_module("dec2", ResBlock2d(4 * base, 2 * base));
  up1_ = register_module("up1", Conv2d(Conv2dOptions(2 * base, base, 3).padding(1)));
  dec1_ = register_module("dec1", ResBlock2d(2 * base, base));
  out_norm_ = register_module("out_norm", group_norm(base));
  out_conv_ = register_module("out_conv", Conv2d(Conv2dOptions(base, kNumClasses, 3).padding(1)));
}

torch::Tensor MapDenoiserImpl::forward(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& bem,
                                       const torch::Tensor& global) {
  if (x_t.dim() != 3 || bem.dim() != 4 || bem.size(1) != kEmbedDim || bem.size(2) != x_t.size(1) ||
      bem.size(3) != x_t.size(2) || global.dim() != 2 || global.size(1) != kEmbedDim || t.dim() != 1 ||
      t.size(0) != x_t.size(0) || bem.size(0) != x_t.size(0) || global.size(0) != x_t.size(0) ||
      x_t.size(1) % 4 != 0 || x_t.size(2) % 4 != 0) {
    throw ShapeError("MapDenoiser: expected x_t (B,H,W), bem (B,64,H,W), global (B,64)");
  }
  const auto dtype = bem.scalar_type();
  auto onehot = torch::one_hot(x_t, kNumClasses).permute({0, 3, 1, 2}).to(dtype);
  auto tt = (t.to(dtype) / num_steps).view({-1, 1, 1, 1}).expand({x_t.size(0), 1, x_t.size(1), x_t.size(2)});
  // Absolute (y, x) in [-1, 1]: the BEM is constant over a patch, so without these the network
  // can only place a one-cell object inside its patch by reading the patch edges.
  const auto opts = torch::TensorOptions().dtype(dtype);
  auto grid = torch::meshgrid({torch::linspace(-1, 1, x_t.size(1), opts), torch::linspace(-1, 1, x_t.size(2), opts)}, "ij");
  auto coords = torch::stack({grid[0], grid[1]}).unsqueeze(0).expand({x_t.size(0), 2, x_t.size(1), x_t.size(2)});
  auto h = in_conv_(torch::cat({onehot, bem, tt, coords}, 1));
  h = h + cond_(global).unsqueeze(-1).unsqueeze(-1);
  auto s1 = enc1_(h);
  auto s2 = enc2_(down1_(s1));
  auto m = mid2_(mid1_(down2_(s2)));
  auto d2 = dec2_(torch::cat({up2_(upsample2(m)), s2}, 1));
  auto d1 = dec1_(torch::cat({up1_(upsample2(d2)), s1}, 1));
  return out_conv_(torch::silu(out_norm_(d1)));
}

SceneDenoiserImpl::SceneDenoiserImpl(int steps, int base) : num_steps(steps) {
  using torch::nn::Conv3d;
  using torch::nn::Conv3dOptions;
  const int in_ch = 2 * kNumClasses + 2;
  in_conv_ = register_module("in_conv", Conv3d(Conv3dOptions(in_ch, base, 3).padding(1)));
  enc1_ = register_module("enc1", ResBlock3d(base, base));
  down1_ = register_module("down1", Conv3d(Conv3dOptions(base, 2 * base, 3).stride(2).padding(1)));
  enc2_ = register_module("enc2", ResBlock3d(2 * base, 2 * base));
  down2_ = register_module("down2", Conv3d(Conv3dOptions(2 * base, 4 * base, 3).stride(2).padding(1)));
  mid_ = register_module("mid", ResBlock3d(4 * base, 4 * base));
  up2_ = register_module("up2", Conv3d(Conv3dOptions(4 * base, 2 * base, 3).padding(1)));
  dec2_ = register_module("dec2", ResBlock3d(4 * base, 2 * base));
  up1_ = register_module("up1", Conv3d(Conv3dOptions(2 * base, base, 3).padding(1)));
  dec1_ = register_module("dec1", ResBlock3d(2 * base, base));
  out_norm_ = register_module("out_norm", group_norm(base));
  out_conv_ = register_module("out_conv", Conv3d(Conv3dOptions(base, kNumClasses, 3).padding(1)));
}

torch::Tensor SceneDenoiserImpl::forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& cond) {
  if (z_t.dim() != 4 || cond.dim() != 4 || cond.size(1) != kNumClasses || cond.size(2) != z_t.size(2) ||
      cond.size(3) != z_t.size(3) || cond.size(0) != z_t.size(0) || t.dim() != 1 || t.size(0) != z_t.size(0) ||
      z_t.size(1) % 4 != 0 || z_t.size(2) % 4 != 0 || z_t.size(3) % 4 != 0) {
    throw ShapeError("SceneDenoiser: expected z_t (B,D,H,W) and cond (B,8,H,W)");
  }
  const auto dtype = cond.scalar_type();
  const int64_t B = z_t.size(0), D = z_t.size(1), H = z_t.size(2), W = z_t.size(3);
  auto onehot = torch::one_hot(z_t, kNumClasses).permute({0, 4, 1, 2, 3}).to(dtype);
  auto c = cond.unsqueeze(2).expand({B, kNumClasses, D, H, W});
  auto tt = (t.to(dtype) / num_steps).view({B, 1, 1, 1, 1}).expand({B, 1, D, H, W});
  auto zz = (torch::arange(D, cond.options()) / std::max<int64_t>(1, D - 1)).view({1, 1, D, 1, 1}).expand({B, 1, D, H, W});
  auto s1 = enc1_(in_conv_(torch::cat({onehot, c, tt, zz}, 1)));
  auto s2 = enc2_(down1_(s1));
  auto m = mid_(down2_(s2));
  auto d2 = dec2_(torch::cat({up2_(upsample2(m)), s2}, 1));
  auto d1 = dec1_(torch::cat({up1_(upsample2(d2)), s1}, 1));
  return out_conv_(torch::silu(out_norm_(d1)));
}

SceneAutoencoderImpl::SceneAutoencoderImpl() {
  using torch::nn::Conv3d;
  using torch::nn::Conv3dOptions;
  enc_ = register_module("enc", torch::nn::Sequential(
                                    Conv3d(Conv3dOptions(kNumClasses, 32, 3).stride(2).padding(1)), torch::nn::SiLU(),
                                    Conv3d(Conv3dOptions(32, 64, 3).stride(2).padding(1)), torch::nn::SiLU(),
                                    Conv3d(Conv3dOptions(64, kAeFeatureDim, 3).padding(1))));
  dec_ = register_module("dec", torch::nn::Sequential(
                                    Conv3d(Conv3dOptions(kAeFeatureDim, 64, 3).padding(1)), torch::nn::SiLU(),
                                    torch::nn::Upsample(torch::nn::UpsampleOptions()
                                                            .scale_factor(std::vector<double>{2, 2, 2})
                                                            .mode(torch::kNearest)),
                                    Conv3d(Conv3dOptions(64, 32, 3).padding(1)), torch::nn::SiLU(),
                                    torch::nn::Upsample(torch::nn::UpsampleOptions()
                                                            .scale_factor(std::vector<double>{2, 2, 2})
                                                            .mode(torch::kNearest)),
                                    Conv3d(Conv3dOptions(32, kNumClasses, 3).padding(1))));
}

torch::Tensor SceneAutoencoderImpl::encode(const torch::Tensor& scenes) {
  auto dtype = enc_->parameters().front().scalar_type();
  return enc_->forward(torch::one_hot(scenes, kNumClasses).permute({0, 4, 1, 2, 3}).to(dtype));
}

torch::Tensor SceneAutoencoderImpl::decode(const torch::Tensor& z) { return dec_->forward(z); }

torch::Tensor SceneAutoencoderImpl::features(const torch::Tensor& scenes) { return encode(scenes).mean({2, 3, 4}); }

torch::Tensor upscale_map(const torch::Tensor& maps, int64_t height, int64_t width) {
  if (maps.dim() != 3) throw ShapeError("upscale_map expects (B, H_b, W_b)");
  auto ys = torch::div(torch::arange(height) * maps.size(1), height, "floor");
  auto xs = torch::div(torch::arange(width) * maps.size(2), width, "floor");
  auto picked = maps.index_select(1, ys).index_select(2, xs);
  return torch::one_hot(picked, kNumClasses).permute({0, 3, 1, 2}).to(torch::kFloat32);
}

}  // namespace sgscene
