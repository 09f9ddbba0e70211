#include "flowface/tensor.hpp"

#include "flowface/common.hpp"

#include <cstring>

namespace flowface {

torch::Tensor to_tensor(const Image& image) {
  auto hwc = torch::from_blob(const_cast<float*>(image.data.data()), {image.height, image.width, 3}, torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous();
}

Image image_from_tensor(const torch::Tensor& chw) {
  require(chw.dim() == 3 && chw.size(0) == 3, "image tensor must be 3 x H x W");
  auto hwc = chw.detach().to(torch::kFloat32).clamp(-1.0, 1.0).permute({1, 2, 0}).contiguous();
  Image img(static_cast<int>(chw.size(1)), static_cast<int>(chw.size(2)));
  std::memcpy(img.data.data(), hwc.data_ptr<float>(), img.data.size() * sizeof(float));
  return img;
}

torch::Tensor labels_tensor(const SegMap& seg) {
  auto t = torch::from_blob(const_cast<std::uint8_t*>(seg.labels.data()), {seg.height, seg.width}, torch::kUInt8);
  return t.to(torch::kInt64);
}

SegMap segmap_from_tensor(const torch::Tensor& labels) {
  require(labels.dim() == 2, "label tensor must be H x W");
  auto t = labels.detach().to(torch::kUInt8).contiguous();
  SegMap seg(static_cast<int>(labels.size(0)), static_cast<int>(labels.size(1)));
  std::memcpy(seg.labels.data(), t.data_ptr<std::uint8_t>(), seg.labels.size());
  return seg;
}

torch::Tensor one_hot_labels(const torch::Tensor& labels) {
  const auto lab = labels.to(torch::kInt64);
  auto oh = torch::one_hot(lab, face3d::kNumClasses).to(torch::kFloat32);
  return oh.movedim(-1, -3).contiguous();
}

torch::Tensor flow_to_tensor(const FlowField& flow) {
  auto hwc = torch::from_blob(const_cast<float*>(flow.data.data()), {flow.height, flow.width, 2}, torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous();
}

FlowField flow_from_tensor(const torch::Tensor& flow) {
  require(flow.dim() == 3 && flow.size(0) == 2, "flow tensor must be 2 x H x W");
  auto hwc = flow.detach().to(torch::kFloat32).permute({1, 2, 0}).contiguous();
  FlowField f(static_cast<int>(flow.size(1)), static_cast<int>(flow.size(2)));
  std::memcpy(f.data.data(), hwc.data_ptr<float>(), f.data.size() * sizeof(float));
  return f;
}

torch::Tensor landmarks_tensor(const face3d::LandmarkSet& lm) {
  auto t = torch::empty({face3d::kContourCount, 2}, torch::kFloat32);
  auto a = t.accessor<float, 2>();
  for (int i = 0; i < face3d::kContourCount; ++i) {
    a[i][0] = static_cast<float>(lm.points(i, 0));
    a[i][1] = static_cast<float>(lm.points(i, 1));
  }
  return t;
}

face3d::LandmarkSet landmarks_from_tensor(const torch::Tensor& lm) {
  require(lm.dim() == 2 && lm.size(0) == face3d::kContourCount && lm.size(1) == 2, "landmark tensor must be 17 x 2");
  auto t = lm.detach().to(torch::kFloat64).contiguous();
  auto a = t.accessor<double, 2>();
  face3d::LandmarkSet out;
  for (int i = 0; i < face3d::kContourCount; ++i) out.points.row(i) << a[i][0], a[i][1];
  return out;
}

torch::Tensor normalize_landmarks(const torch::Tensor& pixels, face3d::ImageSize size) {
  auto scale = torch::tensor({2.0 / (size.width - 1), 2.0 / (size.height - 1)}, pixels.options());
  return pixels * scale - 1.0;
}

torch::Tensor Corpus::seg_one_hot(const torch::Tensor& rows) const { return one_hot_labels(labels.index_select(0, rows)); }

Corpus load_corpus(const synthdata::DatasetManifest& manifest, const std::string& split, int limit) {
  Corpus c;
  for (const auto* r : manifest.split(split)) {
    if (limit > 0 && static_cast<int>(c.records.size()) >= limit) break;
    c.records.push_back(*r);
  }
  require(!c.records.empty(), "dataset split '" + split + "' is empty");
  const auto size = manifest.image_size();
  const auto n = static_cast<std::int64_t>(c.records.size());
  const auto dims = c.records.front().params.psi.size();
  c.images = torch::empty({n, 3, size.height, size.width});
  c.labels = torch::empty({n, size.height, size.width}, torch::kUInt8);
  c.landmarks = torch::empty({n, face3d::kContourCount, 2});
  c.identity = torch::empty({n}, torch::kInt64);
  c.psi = torch::empty({n, dims});
  c.rotation = torch::empty({n, 3});
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& r = c.records[static_cast<std::size_t>(i)];
    const Image img = read_png(manifest.root / r.image_path);
    require(img.size() == size, "image size disagrees with dataset.json: " + r.image_path);
    c.images[i] = to_tensor(img);
    c.labels[i] = labels_tensor(read_seg_png(manifest.root / r.seg_path)).to(torch::kUInt8);
    c.landmarks[i] = landmarks_tensor(r.landmarks);
    c.identity[i] = r.identity_id;
    for (Eigen::Index e = 0; e < dims; ++e) c.psi[i][e] = r.params.psi[e];
    for (int k = 0; k < 3; ++k) c.rotation[i][k] = r.params.theta[k];
  }
  return c;
}

torch::Tensor index_tensor(const std::vector<std::int64_t>& rows) {
  return torch::tensor(rows, torch::kInt64);
}

void seed_torch(std::uint64_t seed) {
  torch::set_num_threads(1);
  torch::manual_seed(seed);
}

}  // namespace flowface
