#include "flowface/nn.hpp"

#include "flowface/common.hpp"

#include <cmath>

namespace flowface::nn {

torch::Tensor sincos_2d(int grid_h, int grid_w, int dim) {
  require(dim % 4 == 0, "sincos_2d: dim must be divisible by 4");
  const int quarter = dim / 4;
  auto omega = torch::arange(quarter, torch::kFloat64) / static_cast<double>(quarter);
  omega = 1.0 / torch::pow(10000.0, omega);
  auto ys = torch::arange(grid_h, torch::kFloat64).repeat_interleave(grid_w);
  auto xs = torch::arange(grid_w, torch::kFloat64).repeat({grid_h});
  auto ey = torch::outer(ys, omega);
  auto ex = torch::outer(xs, omega);
  return torch::cat({torch::sin(ey), torch::cos(ey), torch::sin(ex), torch::cos(ex)}, 1).to(torch::kFloat32);
}

torch::Tensor split_heads(const torch::Tensor& x, int heads) {
  const auto b = x.size(0), n = x.size(1), l = x.size(2);
  require(l % heads == 0, "split_heads: width not divisible by head count");
  return x.reshape({b, n, heads, l / heads}).permute({0, 2, 1, 3});
}

torch::Tensor merge_heads(const torch::Tensor& x) {
  const auto b = x.size(0), h = x.size(1), n = x.size(2), d = x.size(3);
  return x.permute({0, 2, 1, 3}).reshape({b, n, h * d});
}

torch::Tensor attention_weights(const torch::Tensor& q, const torch::Tensor& k) {
  require(q.size(-1) == k.size(-1), "attention: query and key widths differ");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(-1)));
  return torch::softmax(torch::matmul(q, k.transpose(-2, -1)) * scale, -1);
}

SNConv2dImpl::SNConv2dImpl(int in_channels, int out_channels, int kernel, int stride, int padding)
    : stride_(stride), padding_(padding) {
  torch::nn::Conv2d init(torch::nn::Conv2dOptions(in_channels, out_channels, kernel));
  weight_orig_ = register_parameter("weight_orig", init->weight.detach().clone());
  bias_ = register_parameter("bias", init->bias.detach().clone());
  u_ = register_buffer("u", torch::nn::functional::normalize(torch::randn({out_channels}),
                                                             torch::nn::functional::NormalizeFuncOptions().dim(0)));
}

torch::Tensor SNConv2dImpl::normalized_weight() {
  auto w = weight_orig_.reshape({weight_orig_.size(0), -1});
  torch::Tensor u = u_, v;
  {
    torch::NoGradGuard guard;
    v = torch::nn::functional::normalize(torch::mv(w.t(), u), torch::nn::functional::NormalizeFuncOptions().dim(0).eps(1e-12));
    if (is_training()) {
      u = torch::nn::functional::normalize(torch::mv(w, v), torch::nn::functional::NormalizeFuncOptions().dim(0).eps(1e-12));
      u_.copy_(u);
      v = torch::nn::functional::normalize(torch::mv(w.t(), u), torch::nn::functional::NormalizeFuncOptions().dim(0).eps(1e-12));
    }
  }
  const auto sigma = torch::dot(u, torch::mv(w, v));
  return weight_orig_ / sigma;
}

torch::Tensor SNConv2dImpl::forward(const torch::Tensor& x) {
  return torch::conv2d(x, normalized_weight(), bias_, stride_, padding_);
}

MlpImpl::MlpImpl(int dim, int hidden)
    : fc1_(register_module("fc1", torch::nn::Linear(dim, hidden))),
      fc2_(register_module("fc2", torch::nn::Linear(hidden, dim))) {}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) { return fc2_(torch::gelu(fc1_(x))); }

SelfAttentionImpl::SelfAttentionImpl(int dim, int heads)
    : heads_(heads),
      qkv_(register_module("qkv", torch::nn::Linear(dim, 3 * dim))),
      proj_(register_module("proj", torch::nn::Linear(dim, dim))) {
  require(dim % heads == 0, "SelfAttention: width not divisible by heads");
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor& x) {
  auto parts = qkv_(x).chunk(3, -1);
  auto q = split_heads(parts[0], heads_), k = split_heads(parts[1], heads_), v = split_heads(parts[2], heads_);
  return proj_(merge_heads(torch::matmul(attention_weights(q, k), v)));
}

TransformerBlockImpl::TransformerBlockImpl(int dim, int heads, int mlp_ratio)
    : ln1_(register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})))),
      ln2_(register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})))),
      attn_(register_module("attn", SelfAttention(dim, heads))),
      mlp_(register_module("mlp", Mlp(dim, dim * mlp_ratio))) {}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x) {
  auto h = x + attn_(ln1_(x));
  return h + mlp_(ln2_(h));
}

ResBlockImpl::ResBlockImpl(int in_channels, int out_channels, bool upsample)
    : upsample_(upsample),
      norm1_(register_module("norm1", torch::nn::GroupNorm(std::min(8, in_channels), in_channels))),
      norm2_(register_module("norm2", torch::nn::GroupNorm(std::min(8, out_channels), out_channels))),
      conv1_(register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)))),
      conv2_(register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)))) {
  if (in_channels != out_channels)
    skip_ = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1).bias(false)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  namespace F = torch::nn::functional;
  auto in = upsample_ ? F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)) : x;
  auto h = conv1_(F::leaky_relu(norm1_(in), F::LeakyReLUFuncOptions().negative_slope(0.2)));
  h = conv2_(F::leaky_relu(norm2_(h), F::LeakyReLUFuncOptions().negative_slope(0.2)));
  auto skip = skip_ ? skip_(in) : in;
  return (h + skip) * M_SQRT1_2;
}

torch::nn::Sequential conv_block(int in_channels, int out_channels, int stride) {
  return torch::nn::Sequential(
      torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 3).stride(stride).padding(1)),
      torch::nn::GroupNorm(std::min(8, out_channels), out_channels),
      torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
}

torch::nn::Sequential double_conv(int in_channels, int out_channels, int stride) {
  auto s = conv_block(in_channels, out_channels, stride);
  s->extend(*conv_block(out_channels, out_channels, 1));
  return s;
}

torch::Tensor upsample2x(const torch::Tensor& x) {
  namespace F = torch::nn::functional;
  return F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
}

torch::Tensor hinge_d_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  return torch::relu(1.0 - real_logits).mean() + torch::relu(1.0 + fake_logits).mean();
}

torch::Tensor hinge_g_loss(const torch::Tensor& fake_logits) { return -fake_logits.mean(); }

void freeze(torch::nn::Module& module) {
  for (auto& p : module.parameters()) p.set_requires_grad(false);
  module.eval();
}

double max_abs_grad(const torch::nn::Module& module) {
  double m = 0.0;
  for (const auto& p : module.parameters())
    if (p.grad().defined()) m = std::max(m, p.grad().abs().max().item<double>());
  return m;
}

bool all_finite(const torch::nn::Module& module) {
  for (const auto& p : module.parameters())
    if (!torch::isfinite(p).all().item<bool>()) return false;
  return true;
}

}  // namespace flowface::nn
