#pragma once

// Stage one: landmark heatmaps + segmentation -> semantic flow (U-Net), the
// differentiable backward warp, the semantic patch discriminator and the
// reshaping objective.

#include "flowface/auxnets.hpp"
#include "flowface/checkpoint.hpp"
#include "flowface/common.hpp"
#include "flowface/face3d.hpp"
#include "flowface/image.hpp"
#include "flowface/nn.hpp"
#include "flowface/tensor.hpp"

#include "json.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace flowface::reshape {

inline constexpr int kGeneratorChannels = 2 * face3d::kContourCount + face3d::kNumClasses;  // 53
inline constexpr int kDiscriminatorChannels = 3 + face3d::kNumClasses;                      // 22

/// ... x 17 x 2 pixel landmarks -> ... x 17 x H x W Gaussian heatmaps at pixel centres.
torch::Tensor heatmap_encode(const torch::Tensor& landmarks, int height, int width, double sigma = 2.0);
torch::Tensor heatmap_encode(const face3d::LandmarkSet& landmarks, int height, int width, double sigma = 2.0);

/// [heat(P_s2t) | heat(P_t) | one_hot(S_t)] -> N x 53 x H x W.
torch::Tensor generator_input(const torch::Tensor& heat_s2t, const torch::Tensor& heat_t, const torch::Tensor& seg_one_hot);

/// Backward bilinear warp with border replication: out(x, y) = in(x + dx, y + dy).
/// input N x C x H x W, flow N x 2 x H x W in pixels. Differentiable in both.
torch::Tensor warp(const torch::Tensor& input, const torch::Tensor& flow);

struct WarpedPair {
  torch::Tensor image;   // N x 3 x H x W
  torch::Tensor labels;  // N x H x W, re-argmaxed
};
WarpedPair warp_pair(const torch::Tensor& flow, const torch::Tensor& image, const torch::Tensor& seg_one_hot);
std::pair<Image, SegMap> warp(const FlowField& flow, const Image& image, const SegMap& seg);

struct NetConfig {
  int base_width = 16;
  int levels = 4;
  int disc_width = 32;
  double flow_scale = 4.0;  // pixels per unit of raw generator output
  int flow_stride = 4;      // flow predicted at 1/stride resolution, then bilinearly upsampled
  double heatmap_sigma = 2.0;

  nlohmann::json to_json() const;
  static NetConfig from_json(const nlohmann::json& j);
};

/// U-Net G^res; output clamped to +-H pixels.
class FlowGeneratorImpl : public torch::nn::Module {
 public:
  explicit FlowGeneratorImpl(const NetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  NetConfig cfg_;
  torch::nn::ModuleList down_, up_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(FlowGenerator);

/// PatchGAN D^res over [image | one-hot seg], spectral-normalized.
class SemanticDiscriminatorImpl : public torch::nn::Module {
 public:
  SemanticDiscriminatorImpl(int in_channels, int width);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int in_channels_;
  nn::SNConv2d c1_{nullptr}, c2_{nullptr}, c3_{nullptr}, out_{nullptr};
};
TORCH_MODULE(SemanticDiscriminator);

struct LossWeights {
  double rec = 10.0;
  double ldmk = 800.0;
};

struct LossTerms {
  torch::Tensor adv, rec, ldmk, total;
};

/// Mean squared error restricted to rows where `mask` is set; 0 when none is.
torch::Tensor masked_mse(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask);

/// L_adv + w.rec * L_rec + w.ldmk * L_ldmk. Landmarks are in normalized [-1, 1] units.
LossTerms generator_losses(const torch::Tensor& fake_logits, const torch::Tensor& reshaped, const torch::Tensor& target,
                           const torch::Tensor& is_reconstruction, const torch::Tensor& predicted_landmarks,
                           const torch::Tensor& s2t_landmarks, const LossWeights& w);

/// Hinge loss of D on [image | one-hot] pairs; fake inputs are detached.
torch::Tensor discriminator_step(SemanticDiscriminator& d, const torch::Tensor& real_image, const torch::Tensor& real_seg,
                                 const torch::Tensor& fake_image, const torch::Tensor& fake_seg);

/// Training pairs: target rows, source rows, and the contour landmarks.
struct PairBatch {
  torch::Tensor target_rows, source_rows;  // int64
  torch::Tensor is_reconstruction;         // bool, I_s = I_t
  torch::Tensor landmarks_t, landmarks_s2t;  // N x 17 x 2 pixels
};
/// With probability p_same the source is the target sample itself; otherwise
/// it is drawn from a different identity.
PairBatch sample_pairs(const Corpus& corpus, const face3d::BlendModel& model, flowface::Rng& rng, int batch, double p_same);
/// Deterministic held-out (target, source) pairs with distinct identities.
std::vector<std::pair<int, int>> heldout_pairs(const Corpus& corpus, int count, std::uint64_t seed);
PairBatch make_pairs(const Corpus& corpus, const face3d::BlendModel& model, const std::vector<std::pair<int, int>>& pairs);

struct TrainConfig {
  int steps = 2000;
  int batch = 8;
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double p_same = 0.1;
  LossWeights weights;
  std::uint64_t seed = 1;
  int log_every = 50;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct StepLog {
  int step = 0;
  double d_loss = 0, adv = 0, rec = 0, ldmk = 0, total = 0;
};

struct Model {
  NetConfig net;
  FlowGenerator generator{nullptr};
  SemanticDiscriminator discriminator{nullptr};

  explicit Model(const NetConfig& cfg);
};

using LogFn = std::function<void(const nlohmann::json&)>;

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> history;
};

/// Alternating 1:1 D/G updates with Adam. The landmark regressor stays frozen.
TrainResult train_reshape(const Corpus& corpus, const face3d::BlendModel& model, auxnets::LandmarkRegressor& regressor,
                          const NetConfig& net, const TrainConfig& cfg, const LogFn& log = {});

Model load_model(const Checkpoint& ckpt);

/// V_t = G(P_s2t, P_t, S_t) for a batch; landmarks in pixels, seg one-hot.
torch::Tensor estimate_flow(FlowGenerator& g, const NetConfig& net, const torch::Tensor& landmarks_s2t,
                            const torch::Tensor& landmarks_t, const torch::Tensor& seg_one_hot);
FlowField estimate_flow(FlowGenerator& g, const NetConfig& net, const face3d::LandmarkSet& s2t,
                        const face3d::LandmarkSet& t, const SegMap& seg);

struct Reshaped {
  Image image;
  SegMap seg;
  FlowField flow;
};
Reshaped reshape_infer(Model& m, const face3d::BlendModel& model, const Image& target, const SegMap& target_seg,
                       const face3d::FaceParams& source_params, const face3d::FaceParams& target_params);

/// Location in the warped image of the content that sat at `p_target` in the
/// input: the fixed point q = p_target - V(q), V bilinearly interpolated.
Eigen::Vector2d warped_point(const FlowField& flow, const Eigen::Vector2d& p_target, int iterations = 50);
face3d::LandmarkSet warped_landmarks(const FlowField& flow, const face3d::LandmarkSet& target);

struct FlowEval {
  double epe = 0;             // mean over reshaped-face pixels
  double landmark_error = 0;  // warped contour vs P_s2t
  double zero_flow_epe = 0;   // EPE of V = 0
  int pairs = 0;
};
FlowEval evaluate_flow(FlowGenerator& g, const NetConfig& net, const Corpus& corpus, const face3d::BlendModel& model,
                       const std::vector<std::pair<int, int>>& pairs);

}  // namespace flowface::reshape
