#pragma once

// Conversions between the plain value types and libtorch tensors, and the
// in-memory view of one dataset split.

#include "flowface/image.hpp"
#include "flowface/synthdata.hpp"

#include <torch/torch.h>

#include <string>
#include <vector>

namespace flowface {

torch::Tensor to_tensor(const Image& image);             // 3 x H x W, float32
Image image_from_tensor(const torch::Tensor& chw);       // 3 x H x W
torch::Tensor labels_tensor(const SegMap& seg);          // H x W, int64
SegMap segmap_from_tensor(const torch::Tensor& labels);  // H x W
/// (..., H, W) integer labels -> (..., 19, H, W) float one-hot.
torch::Tensor one_hot_labels(const torch::Tensor& labels);
torch::Tensor flow_to_tensor(const FlowField& flow);     // 2 x H x W
FlowField flow_from_tensor(const torch::Tensor& flow);   // 2 x H x W
torch::Tensor landmarks_tensor(const face3d::LandmarkSet& lm);  // 17 x 2, float32
face3d::LandmarkSet landmarks_from_tensor(const torch::Tensor& lm);
/// Pixel coordinates -> [-1, 1] (the normalized image units of the camera).
torch::Tensor normalize_landmarks(const torch::Tensor& pixels, face3d::ImageSize size);

/// One split held in memory, rows aligned with `records`.
struct Corpus {
  std::vector<synthdata::SampleRecord> records;
  torch::Tensor images;     // N x 3 x H x W
  torch::Tensor labels;     // N x H x W, uint8
  torch::Tensor landmarks;  // N x 17 x 2, pixels
  torch::Tensor identity;   // N, int64
  torch::Tensor psi;        // N x E
  torch::Tensor rotation;   // N x 3, axis-angle

  int size() const { return static_cast<int>(records.size()); }
  face3d::ImageSize image_size() const {
    return {static_cast<int>(images.size(2)), static_cast<int>(images.size(3))};
  }
  /// One-hot segmentation for the given rows.
  torch::Tensor seg_one_hot(const torch::Tensor& rows) const;
};

/// `limit` > 0 keeps only the first rows (manifest order).
Corpus load_corpus(const synthdata::DatasetManifest& manifest, const std::string& split, int limit = -1);

torch::Tensor index_tensor(const std::vector<std::int64_t>& rows);

/// Re-seeds libtorch's generator and pins the thread count for reproducible runs.
void seed_torch(std::uint64_t seed);

}  // namespace flowface
