#pragma once

// Desk-scale metric protocol (identity retrieval, shape, expression and pose
// error) and numerical verification helpers.

#include "flowface/auxnets.hpp"
#include "flowface/facemae.hpp"
#include "flowface/reshape.hpp"
#include "flowface/swapnet.hpp"

#include "json.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace flowface::evalsuite {

/// Pairwise summation with a fixed split order (low rounding error, reproducible).
double pairwise_sum(std::span<const double> values);
double pairwise_mean(std::span<const double> values);

struct GradcheckResult {
  bool passed = false;
  double max_rel_error = 0;
  std::string message;
};

/// Central differences of a scalar function against autograd, per element:
/// |a - n| / max(|a|, |n|, 1e-8). Non-finite evaluations are a failure, not a throw.
GradcheckResult finite_diff_gradcheck(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& input,
                                      double epsilon, double tolerance);

/// Percentage of rows whose nearest-cosine gallery centroid has the true identity.
/// swapped M x D, true_ids M, gallery K x D, gallery_ids K.
double id_retrieval_accuracy(const torch::Tensor& swapped, const torch::Tensor& true_ids, const torch::Tensor& gallery,
                             const torch::Tensor& gallery_ids);

/// Accuracy (%) of retrieval with random unit embeddings and two balanced identities.
double random_retrieval_accuracy(int trials, int dim, std::uint64_t seed);

struct Gallery {
  torch::Tensor centroids;  // K x D
  torch::Tensor ids;        // K
};
/// Mean embedding of the first `renders` rows of every identity.
Gallery build_gallery(const std::function<torch::Tensor(const torch::Tensor&)>& embed, const Corpus& corpus, int renders = 5);

/// Mean L2 (px) between regressed contour landmarks of the images and `s2t` (N x 17 x 2).
double shape_error(auxnets::LandmarkRegressor& regressor, const torch::Tensor& images, const torch::Tensor& s2t);
/// Mean ||E_exp(a) - E_exp(b)||.
double expression_error(auxnets::ExpEmbedder& embedder, const torch::Tensor& swapped, const torch::Tensor& targets);
/// Mean geodesic angle (degrees) between regressed and given axis-angle rotations (N x 3).
double pose_error(auxnets::PoseRegressor& regressor, const torch::Tensor& swapped, const torch::Tensor& target_rotation);
double pose_error(const torch::Tensor& predicted_rotation, const torch::Tensor& target_rotation);

struct EvalReport {
  std::string label;
  std::vector<std::string> embedders;
  std::vector<double> id_acc;  // per embedder, %
  double id_acc_mean = 0;
  double shape_error = 0;  // px
  double expr_error = 0;
  double pose_error = 0;  // degrees
  int samples = 0;
  std::string config_hash;

  void validate() const;
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  static std::string csv_header();
  std::string csv_row() const;
};

/// Table with one row per report: ID Acc(%), Shape, Expr., Pose.
std::string table_text(const std::vector<EvalReport>& reports);

struct EvalNets {
  auxnets::IdEmbedder id_a{nullptr}, id_b{nullptr};
  auxnets::ExpEmbedder exp{nullptr};
  auxnets::LandmarkRegressor landmarks{nullptr};
  auxnets::PoseRegressor pose{nullptr};
};

/// Swapped outputs with what the metrics need about each pair.
struct SwapSet {
  torch::Tensor swapped;          // N x 3 x H x W
  torch::Tensor targets;          // original I_t
  torch::Tensor source_ids;       // N
  torch::Tensor s2t_landmarks;    // N x 17 x 2
  torch::Tensor target_rotation;  // N x 3
};

/// Runs the pipeline on (target row, source row) pairs. With `use_reshape`
/// false the target embedding comes from I_t itself (no stage one).
SwapSet run_swaps(const Corpus& corpus, const face3d::BlendModel& model, reshape::Model& res, facemae::FaceEncoder& encoder,
                  swapnet::SwapModel& swap, const std::vector<std::pair<int, int>>& pairs, bool use_reshape);

/// Ideal swaps: ground-truth renders of (beta_s, theta_t, psi_t, c_t) with the
/// source texture and the target scene.
SwapSet oracle_set(const Corpus& corpus, const face3d::BlendModel& model, const std::vector<std::pair<int, int>>& pairs);

EvalReport evaluate(EvalNets& nets, const SwapSet& set, const Gallery& gallery_a, const Gallery& gallery_b, const std::string& label);

}  // namespace flowface::evalsuite
