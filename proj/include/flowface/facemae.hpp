#pragma once

// Shared face encoder: patch embedding + transformer stack, pretrained as a
// masked autoencoder and frozen afterwards.

#include "flowface/checkpoint.hpp"
#include "flowface/image.hpp"
#include "flowface/nn.hpp"
#include "flowface/tensor.hpp"

#include "json.hpp"

#include <functional>
#include <vector>

namespace flowface::facemae {

struct EncoderConfig {
  int image_size = 64;
  int patch = 16;
  int width = 128;
  int depth = 4;
  int heads = 4;
  int decoder_width = 64;
  int decoder_depth = 2;
  double mask_ratio = 0.75;
  bool positions = true;

  int grid() const { return image_size / patch; }
  int tokens() const { return grid() * grid(); }
  int patch_dim() const { return 3 * patch * patch; }
  void validate() const;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

struct MaskPlan {
  double ratio = 0;
  std::vector<bool> masked;                  // length N
  std::vector<std::int64_t> visible;         // sorted
  std::vector<std::int64_t> masked_indices;  // sorted
};

/// Uniform subset of round(ratio * n) masked indices; deterministic per seed.
MaskPlan random_mask(int n, double ratio, std::uint64_t seed);

/// B x 3 x H x W -> B x N x (3 P P), patches in row-major grid order, pixels (c, y, x).
torch::Tensor patchify(const torch::Tensor& images, int patch);
torch::Tensor unpatchify(const torch::Tensor& patches, int patch, int grid);

class FaceEncoderImpl : public torch::nn::Module {
 public:
  explicit FaceEncoderImpl(const EncoderConfig& cfg);
  /// All patches: B x N x L.
  torch::Tensor forward(const torch::Tensor& images);
  /// Only the listed patches (B x K indices): B x K x L.
  torch::Tensor forward_visible(const torch::Tensor& images, const torch::Tensor& visible);
  const EncoderConfig& config() const { return cfg_; }

 private:
  torch::Tensor run(torch::Tensor tokens);

  EncoderConfig cfg_;
  torch::nn::Linear embed_{nullptr};
  torch::Tensor pos_;
  torch::nn::ModuleList blocks_;
  torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(FaceEncoder);

/// Pretraining-only decoder: visible latents + mask tokens -> per-patch pixels.
class MaeDecoderImpl : public torch::nn::Module {
 public:
  explicit MaeDecoderImpl(const EncoderConfig& cfg);
  /// latent B x K x L at `visible` (B x K) -> B x N x (3 P P).
  torch::Tensor forward(const torch::Tensor& latent, const torch::Tensor& visible);

 private:
  EncoderConfig cfg_;
  torch::nn::Linear embed_{nullptr}, pred_{nullptr};
  torch::Tensor mask_token_, pos_;
  torch::nn::ModuleList blocks_;
  torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(MaeDecoder);

/// Per-patch normalized target: (x - mean) / sqrt(var + 1e-6) over each patch.
torch::Tensor normalized_targets(const torch::Tensor& patches);

/// Mean over masked patches of the per-patch MSE against normalized targets.
/// pred, target B x N x D; masked B x N bool.
torch::Tensor mae_loss(const torch::Tensor& pred, const torch::Tensor& target_patches, const torch::Tensor& masked);

struct Mae {
  EncoderConfig cfg;
  FaceEncoder encoder{nullptr};
  MaeDecoder decoder{nullptr};

  explicit Mae(const EncoderConfig& cfg);
  /// Reconstruction loss of a batch under one plan per row.
  torch::Tensor loss(const torch::Tensor& images, const std::vector<MaskPlan>& plans);
};

struct PretrainConfig {
  int steps = 2000;
  int batch = 16;
  double lr = 1e-3;
  double weight_decay = 0.05;
  int warmup = 100;
  std::uint64_t seed = 5;
  int log_every = 100;

  nlohmann::json to_json() const;
  static PretrainConfig from_json(const nlohmann::json& j);
};

using LogFn = std::function<void(const nlohmann::json&)>;

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;  // one per step
};

/// AdamW with linear warmup and cosine decay; per-row masks seeded from (seed, step, row).
PretrainResult pretrain_mae(const Corpus& corpus, const EncoderConfig& enc, const PretrainConfig& cfg, const LogFn& log = {});

Mae load_mae(const Checkpoint& ckpt);
/// Encoder only, frozen.
FaceEncoder load_encoder(const Checkpoint& ckpt);

/// N x L embeddings of one image.
torch::Tensor encode(FaceEncoder& encoder, const Image& image);

}  // namespace flowface::facemae
