#pragma once

// Synthetic face corpus: rasterized parametric faces with exact segmentation,
// landmarks, identity, expression and dense-flow ground truth.

#include "flowface/face3d.hpp"
#include "flowface/image.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace flowface::synthdata {

struct IdentitySpec {
  int identity_id = 0;
  Eigen::VectorXd beta;
  std::uint64_t texture_seed = 0;
};

/// Per-sample scene attributes that belong to the target, not the identity.
struct SceneStyle {
  std::array<double, 3> background{0.5, 0.5, 0.5};
  std::array<double, 3> light{0.0, 0.0, 1.0};
  double ambient = 0.5;

  static SceneStyle from_seed(std::uint64_t seed);
};

/// Pixel -> triangle assignment for one projected mesh.
struct Raster {
  int height = 0;
  int width = 0;
  std::vector<int> triangle;                 // -1 for background
  std::vector<std::array<float, 3>> bary;    // barycentric weights
  bool covered(int y, int x) const { return triangle[static_cast<std::size_t>(y) * width + x] >= 0; }
  double coverage() const;
};

/// Rasterizes at pixel centres (integer pixel coordinates) with a z-buffer
/// (larger z is closer to the camera).
Raster rasterize(const Eigen::MatrixX2d& pixels, const Eigen::VectorXd& depth,
                 const std::vector<std::array<int, 3>>& triangles, face3d::ImageSize size);

struct Rendered {
  Image image;
  SegMap seg;
};

Rendered render_face(const face3d::BlendModel& model, const face3d::FaceParams& params, std::uint64_t texture_seed,
                     face3d::ImageSize size = {}, const SceneStyle& scene = {});

/// Backward flow that warps the target render onto the reshaped face
/// (beta_src, theta_t, psi_t, c_t). Background is filled by inverse-distance
/// weighting from the face boundary.
FlowField ground_truth_flow(const face3d::BlendModel& model, const face3d::FaceParams& params_tgt,
                            const face3d::FaceParams& params_src_shape, face3d::ImageSize size = {});
/// Pixels covered by the reshaped face, the support used for end-point error.
std::vector<std::uint8_t> reshaped_face_mask(const face3d::BlendModel& model, const face3d::FaceParams& params_tgt,
                                             const face3d::FaceParams& params_src_shape, face3d::ImageSize size = {});

struct SamplerConfig {
  double beta_sigma = 0.75;
  double beta_clip = 2.0;
  double yaw = 0.3, pitch = 0.2, roll = 0.15;
  double jaw_max = 0.12;
  double psi_range = 1.0;
  double scale_min = 0.9, scale_max = 1.08;
  double translation = 0.06;
};

IdentitySpec sample_identity(std::uint64_t master_seed, int identity_id, const face3d::ModelDims& dims,
                             const SamplerConfig& cfg = {});
/// Pose/expression/camera for one sample; resamples until the face covers
/// 20%..80% of the frame and all contour landmarks lie inside it.
face3d::FaceParams sample_params(const face3d::BlendModel& model, const IdentitySpec& identity, std::uint64_t sample_seed,
                                 face3d::ImageSize size, const SamplerConfig& cfg = {});

struct DatasetConfig {
  int identities = 8;
  int per_identity = 100;
  int val_per_identity = 10;
  int image_size = 64;
  std::uint64_t master_seed = 1234;
  std::uint64_t model_seed = 7;
  face3d::ModelDims dims;
  SamplerConfig sampler;
  int workers = 1;
  std::string config_hash;  // embedded in dataset.json
};

/// One manifest line: everything needed to re-render and to train.
struct SampleRecord {
  std::string split;  // "train" or "val"
  int identity_id = 0;
  int sample_index = 0;
  std::string image_path;  // relative to the dataset root
  std::string seg_path;
  face3d::FaceParams params;
  face3d::LandmarkSet landmarks;
  Eigen::VectorXd expression_label;
  std::uint64_t texture_seed = 0;
  std::uint64_t scene_seed = 0;
};

nlohmann::json params_to_json(const face3d::FaceParams& p);
face3d::FaceParams params_from_json(const nlohmann::json& j);
nlohmann::json record_to_json(const SampleRecord& r);
SampleRecord record_from_json(const nlohmann::json& j);

struct DatasetManifest {
  std::filesystem::path root;
  nlohmann::json info;  // dataset.json contents
  std::vector<SampleRecord> records;

  std::vector<const SampleRecord*> split(const std::string& name) const;
  face3d::ImageSize image_size() const;
  std::string manifest_hash() const { return info.value("manifest_hash", ""); }
};

DatasetManifest generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);
DatasetManifest load_dataset(const std::filesystem::path& root);
bool dataset_exists(const std::filesystem::path& root);

/// FNV-1a of a file's bytes, hex encoded.
std::string file_hash(const std::filesystem::path& path);

}  // namespace flowface::synthdata
