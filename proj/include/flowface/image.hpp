#pragma once

// Plain value types for images, segmentation maps and flow fields, plus their
// on-disk formats (PNG and the SFLW flow container).

#include "flowface/face3d.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace flowface {

/// H x W x 3, interleaved RGB, values in [-1, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, float fill = -1.0f) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

  float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  face3d::ImageSize size() const { return {height, width}; }
  bool operator==(const Image&) const = default;
};

/// H x W class map with ids in [0, 19).
struct SegMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  SegMap() = default;
  SegMap(int h, int w) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  /// H x W x 19, one channel per class.
  std::vector<float> one_hot() const;
  bool operator==(const SegMap&) const = default;
};

/// Backward displacement field in pixels: out(x, y) samples in(x + dx, y + dy).
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // H x W x 2, (dx, dy) per pixel

  FlowField() = default;
  FlowField(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 2, 0.0f) {}

  float& dx(int y, int x) { return data[(static_cast<std::size_t>(y) * width + x) * 2]; }
  float& dy(int y, int x) { return data[(static_cast<std::size_t>(y) * width + x) * 2 + 1]; }
  float dx(int y, int x) const { return data[(static_cast<std::size_t>(y) * width + x) * 2]; }
  float dy(int y, int x) const { return data[(static_cast<std::size_t>(y) * width + x) * 2 + 1]; }
  bool operator==(const FlowField&) const = default;
};

/// 8-bit RGB PNG; value v is stored as round((v + 1) * 127.5).
void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);
/// 8-bit palette-indexed PNG whose indices are class ids.
void write_seg_png(const SegMap& seg, const std::filesystem::path& path);
SegMap read_seg_png(const std::filesystem::path& path);
/// Raw 8-bit RGB rows, used by the visualizers.
void write_rgb8_png(int height, int width, const std::vector<std::uint8_t>& rgb, const std::filesystem::path& path);

/// "SFLW", u32 H, u32 W, then H x W x 2 float32 (dx then dy), row-major.
void write_flow(const FlowField& flow, const std::filesystem::path& path);
FlowField read_flow(const std::filesystem::path& path);

/// Quantize through the PNG encoding (what a saved-and-reloaded image looks like).
Image quantize_8bit(const Image& image);

}  // namespace flowface
