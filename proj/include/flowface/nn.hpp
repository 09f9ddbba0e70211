#pragma once

// Network building blocks shared by the stages: spectral-normalized conv,
// multi-head attention, pre-norm transformer block, sinusoidal positions.

#include <torch/torch.h>

namespace flowface::nn {

/// Fixed 2D sine-cosine position table, (gh * gw) x dim, row-major over the grid.
torch::Tensor sincos_2d(int grid_h, int grid_w, int dim);

/// B x N x L -> B x heads x N x (L / heads) and back.
torch::Tensor split_heads(const torch::Tensor& x, int heads);
torch::Tensor merge_heads(const torch::Tensor& x);

/// Row-wise softmax(q k^T / sqrt(d_k)); q is ... x Nq x d_k, k is ... x Nk x d_k.
torch::Tensor attention_weights(const torch::Tensor& q, const torch::Tensor& k);

/// Conv2d whose weight is divided by its largest singular value, estimated by
/// one power iteration per training forward.
class SNConv2dImpl : public torch::nn::Module {
 public:
  SNConv2dImpl(int in_channels, int out_channels, int kernel, int stride, int padding);
  torch::Tensor forward(const torch::Tensor& x);
  /// Current normalized weight (uses the stored u without updating it).
  torch::Tensor normalized_weight();

 private:
  torch::Tensor weight_orig_, bias_, u_;
  int stride_, padding_;
};
TORCH_MODULE(SNConv2d);

class MlpImpl : public torch::nn::Module {
 public:
  MlpImpl(int dim, int hidden);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(Mlp);

class SelfAttentionImpl : public torch::nn::Module {
 public:
  SelfAttentionImpl(int dim, int heads);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int heads_;
  torch::nn::Linear qkv_{nullptr}, proj_{nullptr};
};
TORCH_MODULE(SelfAttention);

/// x + Attn(LN(x)), then x + MLP(LN(x)).
class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(int dim, int heads, int mlp_ratio = 4);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::LayerNorm ln1_{nullptr}, ln2_{nullptr};
  SelfAttention attn_{nullptr};
  Mlp mlp_{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// Two 3x3 convs with a (1x1 projected) skip; optional 2x nearest upsampling first.
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int in_channels, int out_channels, bool upsample);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  bool upsample_;
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
};
TORCH_MODULE(ResBlock);

/// 3x3 conv, GroupNorm, LeakyReLU(0.2).
torch::nn::Sequential conv_block(int in_channels, int out_channels, int stride);
/// conv_block(stride) followed by conv_block(1).
torch::nn::Sequential double_conv(int in_channels, int out_channels, int stride);
torch::Tensor upsample2x(const torch::Tensor& x);

/// Hinge losses: D minimizes mean(relu(1 - real)) + mean(relu(1 + fake));
/// the generator minimizes -mean(fake).
torch::Tensor hinge_d_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);
torch::Tensor hinge_g_loss(const torch::Tensor& fake_logits);

/// Freezes a module: no gradients, eval mode.
void freeze(torch::nn::Module& module);
/// Largest |grad| over parameters; 0 when no gradient was ever accumulated.
double max_abs_grad(const torch::nn::Module& module);
bool all_finite(const torch::nn::Module& module);

}  // namespace flowface::nn
