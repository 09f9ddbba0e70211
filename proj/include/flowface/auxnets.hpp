#pragma once

// Small networks trained on the synthetic ground truth that stand in for the
// frozen third-party models: identity and expression embedders, contour
// landmark regressor, head-pose regressor, perceptual feature net.

#include "flowface/checkpoint.hpp"
#include "flowface/tensor.hpp"

#include "json.hpp"

#include <functional>
#include <string>
#include <vector>

namespace flowface::auxnets {

inline constexpr int kIdEmbedding = 64;
inline constexpr int kExpEmbedding = 16;

/// Five 3x3 conv stages, stride 2 after the first: 64x64 -> 4x4 at 8*width channels.
class ConvBackboneImpl : public torch::nn::Module {
 public:
  ConvBackboneImpl(int width, int image_size);
  torch::Tensor forward(const torch::Tensor& x);  // N x features
  int features() const { return features_; }

 private:
  torch::nn::Sequential body_{nullptr};
  int features_ = 0;
};
TORCH_MODULE(ConvBackbone);

class IdEmbedderImpl : public torch::nn::Module {
 public:
  IdEmbedderImpl(int width, int identities, int image_size);
  /// Unit-norm identity embedding, N x 64.
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor logits(const torch::Tensor& x);

 private:
  ConvBackbone backbone_{nullptr};
  torch::nn::Linear embed_{nullptr}, classify_{nullptr};
};
TORCH_MODULE(IdEmbedder);

class ExpEmbedderImpl : public torch::nn::Module {
 public:
  ExpEmbedderImpl(int width, int expression_dims, int image_size);
  /// Final hidden layer, N x 16 (unnormalized).
  torch::Tensor forward(const torch::Tensor& x);
  /// Regressed psi, N x E.
  torch::Tensor regress(const torch::Tensor& x);

 private:
  ConvBackbone backbone_{nullptr};
  torch::nn::Linear embed_{nullptr}, head_{nullptr};
};
TORCH_MODULE(ExpEmbedder);

/// Regresses the global head rotation (axis-angle).
class PoseRegressorImpl : public torch::nn::Module {
 public:
  PoseRegressorImpl(int width, int image_size);
  torch::Tensor forward(const torch::Tensor& x);  // N x 3

 private:
  ConvBackbone backbone_{nullptr};
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(PoseRegressor);

/// Encoder-decoder producing 17 heatmaps at half resolution, read out with a
/// soft-argmax; differentiable with respect to the input image.
class LandmarkRegressorImpl : public torch::nn::Module {
 public:
  LandmarkRegressorImpl(int width, int image_size);
  torch::Tensor forward(const torch::Tensor& x);  // N x 17 x 2, pixels

 private:
  int image_size_;
  torch::nn::Sequential e0_{nullptr}, e1_{nullptr}, e2_{nullptr}, e3_{nullptr}, d2_{nullptr}, d1_{nullptr};
  torch::nn::Conv2d head_{nullptr};
  torch::Tensor temperature_;
};
TORCH_MODULE(LandmarkRegressor);

/// Convolutional autoencoder; features() returns its last two encoder stages.
class PerceptualNetImpl : public torch::nn::Module {
 public:
  explicit PerceptualNetImpl(int width);
  std::vector<torch::Tensor> features(const torch::Tensor& x);
  torch::Tensor forward(const torch::Tensor& x);  // reconstruction

 private:
  torch::nn::Sequential s1_{nullptr}, s2_{nullptr}, s3_{nullptr}, decoder_{nullptr};
};
TORCH_MODULE(PerceptualNet);

/// Sum over the two stages of the mean squared feature difference.
torch::Tensor perceptual_distance(PerceptualNet& net, const torch::Tensor& a, const torch::Tensor& b);

struct TrainConfig {
  int steps = 1500;
  int batch = 16;
  double lr = 1e-3;
  int width = 16;
  std::uint64_t seed = 11;
  bool augment = true;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Stage tags used in checkpoints.
inline constexpr const char* kLandmarkTag = "aux-landmark";
inline constexpr const char* kIdTrainTag = "aux-id-train";
inline constexpr const char* kIdEvalATag = "aux-id-a";
inline constexpr const char* kIdEvalBTag = "aux-id-b";
inline constexpr const char* kExpTrainTag = "aux-exp-train";
inline constexpr const char* kExpEvalTag = "aux-exp-eval";
inline constexpr const char* kPoseTag = "aux-pose";
inline constexpr const char* kPerceptualTag = "aux-perceptual";

using LogFn = std::function<void(const nlohmann::json&)>;

/// Blur, noise and brightness jitter so the regressors tolerate warped and
/// decoded images. Deterministic given the generator state.
torch::Tensor augment(const torch::Tensor& images);

struct WarpedLandmarks {
  torch::Tensor images;     // N x 3 x H x W
  torch::Tensor landmarks;  // N x 17 x 2, pixels, moved with the content
};
/// Random smooth backward warp (a `grid` x `grid` lattice of N(0, sigma^2)
/// pixel offsets, bilinearly upsampled) applied to images and their landmarks.
/// Teaches the regressor to follow the geometry rather than texture cues.
WarpedLandmarks random_smooth_warp(const torch::Tensor& images, const torch::Tensor& landmarks, double sigma, int grid = 4);

Checkpoint train_id_embedder(const Corpus& train, const TrainConfig& cfg, const std::string& tag, const LogFn& log = {});
Checkpoint train_exp_embedder(const Corpus& train, const TrainConfig& cfg, const std::string& tag, const LogFn& log = {});
Checkpoint train_landmark_regressor(const Corpus& train, const TrainConfig& cfg, const LogFn& log = {});
Checkpoint train_pose_regressor(const Corpus& train, const TrainConfig& cfg, const LogFn& log = {});
Checkpoint train_perceptual(const Corpus& train, const TrainConfig& cfg, const LogFn& log = {});

/// Rebuild a frozen network from its checkpoint.
IdEmbedder load_id_embedder(const Checkpoint& ckpt);
ExpEmbedder load_exp_embedder(const Checkpoint& ckpt);
LandmarkRegressor load_landmark_regressor(const Checkpoint& ckpt);
PoseRegressor load_pose_regressor(const Checkpoint& ckpt);
PerceptualNet load_perceptual(const Checkpoint& ckpt);

/// Batched no-grad evaluation helper: applies fn to consecutive row chunks and concatenates.
torch::Tensor batched(const torch::Tensor& images, int chunk, const std::function<torch::Tensor(const torch::Tensor&)>& fn);

struct AuxReport {
  double id_train_accuracy = 0;   // training-split classification accuracy
  double id_margin = 0;           // mean same-id cosine minus mean cross-id cosine (val)
  double exp_val_mse = 0;
  double exp_spearman = 0;
  double landmark_val_error = 0;  // mean px
  double pose_val_error_deg = 0;
  double perceptual_triplet_rate = 0;
};

double id_accuracy(IdEmbedder& net, const Corpus& corpus);
double id_margin(IdEmbedder& net, const Corpus& corpus);
double exp_mse(ExpEmbedder& net, const Corpus& corpus);
/// Spearman correlation between embedding distance and |psi_a - psi_b| over deterministic pairs.
double exp_spearman(ExpEmbedder& net, const Corpus& corpus, int pairs, std::uint64_t seed);
double landmark_error(LandmarkRegressor& net, const Corpus& corpus);
double pose_error_deg(PoseRegressor& net, const Corpus& corpus);
/// Fraction of (anchor, augmented copy, other identity) triples where the copy is closer.
double perceptual_triplet_rate(PerceptualNet& net, const Corpus& corpus, int triples, std::uint64_t seed);

double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace flowface::auxnets
