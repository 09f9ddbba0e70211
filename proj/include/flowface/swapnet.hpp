#pragma once

// Stage two: cross-attention fusion of source and reshaped-target patch
// embeddings, convolutional decoder, swap objective and training loop, and
// the two-stage inference pipeline.

#include "flowface/auxnets.hpp"
#include "flowface/checkpoint.hpp"
#include "flowface/facemae.hpp"
#include "flowface/reshape.hpp"

#include "json.hpp"

#include <functional>
#include <vector>

namespace flowface::swapnet {

/// Row-wise softmax(q k^T / sqrt(d_k)) over the last two dims.
torch::Tensor cross_attention(const torch::Tensor& q, const torch::Tensor& k);

struct SwapConfig {
  int heads = 4;
  int mlp_ratio = 4;
  int blocks = 2;
  int decoder_channels = 128;
  int disc_width = 32;

  void validate(int width) const;
  nlohmann::json to_json() const;
  static SwapConfig from_json(const nlohmann::json& j);
};

struct FuseTrace {
  torch::Tensor attention;  // B x heads x N_t x N_s
  torch::Tensor v_fused;    // B x N_t x L, heads concatenated before projection
  torch::Tensor fused;      // e_fu
};

class CafmImpl : public torch::nn::Module {
 public:
  CafmImpl(int width, const SwapConfig& cfg);
  /// Cross-attention block: V_fu = CA(Q_t, K_s) V_s + V_t, projection and
  /// LN/MLP with skip connections.
  FuseTrace fuse(const torch::Tensor& e_s, const torch::Tensor& e_t);
  /// fuse followed by the transformer blocks; e_o has the shape of e_t.
  torch::Tensor forward(const torch::Tensor& e_s, const torch::Tensor& e_t);

  int heads() const { return heads_; }
  torch::nn::LayerNorm& norm_source() { return ln_s_; }
  torch::nn::LayerNorm& norm_target() { return ln_t_; }
  torch::nn::Linear& query() { return q_; }
  torch::nn::Linear& key() { return k_; }
  torch::nn::Linear& value_source() { return vs_; }
  torch::nn::Linear& value_target() { return vt_; }
  torch::nn::Linear& projection() { return proj_; }
  torch::nn::LayerNorm& norm_mlp() { return ln_mlp_; }
  nn::Mlp& mlp() { return mlp_; }

 private:
  int heads_;
  torch::nn::LayerNorm ln_s_{nullptr}, ln_t_{nullptr}, ln_mlp_{nullptr};
  torch::nn::Linear q_{nullptr}, k_{nullptr}, vs_{nullptr}, vt_{nullptr}, proj_{nullptr};
  nn::Mlp mlp_{nullptr};
  torch::nn::ModuleList blocks_;
};
TORCH_MODULE(Cafm);

/// Token grid -> image: 1x1 stem, upsampling residual blocks, tanh.
class SwapDecoderImpl : public torch::nn::Module {
 public:
  SwapDecoderImpl(int width, int grid, int image_size, int channels);
  torch::Tensor forward(const torch::Tensor& tokens);  // B x N x L -> B x 3 x H x W

 private:
  int grid_, image_size_;
  torch::nn::Conv2d stem_{nullptr}, out_{nullptr};
  torch::nn::ModuleList blocks_;
  torch::nn::GroupNorm norm_{nullptr};
};
TORCH_MODULE(SwapDecoder);

/// CAFM + decoder: I_o = decode(cafm(e_s, e_t)).
class SwapGeneratorImpl : public torch::nn::Module {
 public:
  SwapGeneratorImpl(const facemae::EncoderConfig& encoder, const SwapConfig& cfg);
  torch::Tensor forward(const torch::Tensor& e_s, const torch::Tensor& e_t);

  Cafm cafm{nullptr};
  SwapDecoder decoder{nullptr};
};
TORCH_MODULE(SwapGenerator);

struct SwapModel {
  facemae::EncoderConfig encoder;
  SwapConfig cfg;
  SwapGenerator generator{nullptr};
  reshape::SemanticDiscriminator discriminator{nullptr};  // image only, 3 channels

  SwapModel(const facemae::EncoderConfig& encoder, const SwapConfig& cfg);
};

struct LossWeights {
  double rec = 10.0;
  double id = 5.0;
  double exp = 10.0;
  double ldmk = 5000.0;
  double perc = 2.0;
};

struct LossTerms {
  torch::Tensor adv, rec, id, exp, ldmk, perc, total;
};

/// Weighted objective from precomputed network outputs. Landmarks in normalized units.
LossTerms combine_losses(const torch::Tensor& fake_logits, const torch::Tensor& swapped, const torch::Tensor& reshaped_target,
                         const torch::Tensor& is_reconstruction, const torch::Tensor& id_swapped, const torch::Tensor& id_source,
                         const torch::Tensor& exp_swapped, const torch::Tensor& exp_target, const torch::Tensor& ldmk_swapped,
                         const torch::Tensor& ldmk_reshaped, const torch::Tensor& perc_distance, const LossWeights& w);

/// Frozen networks the objective depends on.
struct AuxNets {
  auxnets::IdEmbedder id{nullptr};
  auxnets::ExpEmbedder exp{nullptr};
  auxnets::LandmarkRegressor landmarks{nullptr};
  auxnets::PerceptualNet perceptual{nullptr};
};

/// Full objective: runs the frozen aux nets on I_o, I_s, I_t and I_t^res.
LossTerms swap_losses(AuxNets& aux, const torch::Tensor& fake_logits, const torch::Tensor& swapped, const torch::Tensor& source,
                      const torch::Tensor& target, const torch::Tensor& reshaped_target, const torch::Tensor& is_reconstruction,
                      const LossWeights& w);

/// I_t^res for a batch of pairs, no gradient.
torch::Tensor reshape_targets(reshape::Model& res, const Corpus& corpus, const reshape::PairBatch& pairs);

struct TrainConfig {
  int steps = 4000;
  int batch = 8;
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double p_same = 0.25;
  LossWeights weights;
  std::uint64_t seed = 3;
  int log_every = 50;
  int precompute = 0;  // > 0: draw pairs from a fixed bank of this many precomputed I_t^res

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct StepLog {
  int step = 0;
  double d_loss = 0, adv = 0, rec = 0, id = 0, exp = 0, ldmk = 0, perc = 0, total = 0;
};

using LogFn = std::function<void(const nlohmann::json&)>;

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> history;
};

/// Trains CAFM, decoder and discriminator with Adam; encoder, stage one and
/// aux nets must be frozen (a trainable encoder is rejected).
TrainResult train_swap(const Corpus& corpus, const face3d::BlendModel& model, reshape::Model& res, facemae::FaceEncoder& encoder,
                       AuxNets& aux, const SwapConfig& cfg, const TrainConfig& train, const LogFn& log = {});

SwapModel load_swap(const Checkpoint& ckpt);

/// Batched generation: I_o for source images and already reshaped targets.
torch::Tensor swap_batch(SwapModel& m, facemae::FaceEncoder& encoder, const torch::Tensor& source, const torch::Tensor& reshaped_target);

struct SwapResult {
  Image swapped;
  reshape::Reshaped reshaped;
};

/// I_t^res = reshape(I_t); I_o = decode(cafm(encode(I_s), encode(I_t^res))).
SwapResult swap_faces(const Image& source, const Image& target, const SegMap& target_seg, const face3d::FaceParams& source_params,
                      const face3d::FaceParams& target_params, const face3d::BlendModel& model, reshape::Model& res,
                      facemae::FaceEncoder& encoder, SwapModel& swap);

}  // namespace flowface::swapnet
