#include "flowface/binary_io.hpp"
#include "flowface/common.hpp"
#include "flowface/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace flowface {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Fixed 19-entry palette so segmentation PNGs are viewable.
constexpr std::uint8_t kPalette[face3d::kNumClasses][3] = {
    {0, 0, 0},       {204, 0, 0},   {76, 153, 0},  {204, 204, 0}, {51, 51, 255},  {204, 0, 204}, {0, 255, 255},
    {255, 204, 204}, {102, 51, 0},  {255, 0, 0},   {102, 204, 0}, {255, 255, 0},  {0, 0, 153},   {0, 0, 204},
    {255, 51, 153},  {0, 204, 204}, {0, 51, 0},    {255, 153, 51}, {0, 204, 0}};

void write_png_rows(const std::filesystem::path& path, int height, int width, int color_type,
                    const std::vector<std::uint8_t>& bytes, int channels, bool with_palette) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw RuntimeAbort("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeAbort("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeAbort("PNG encode failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_color palette[face3d::kNumClasses];
  if (with_palette) {
    for (int i = 0; i < face3d::kNumClasses; ++i) palette[i] = {kPalette[i][0], kPalette[i][1], kPalette[i][2]};
    png_set_PLTE(png, info, palette, face3d::kNumClasses);
  }
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * width * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct Decoded {
  int height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> bytes;
};

// expand_palette=false keeps palette indices as raw bytes.
Decoded read_png_rows(const std::filesystem::path& path, bool expand_palette) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ValidationError("cannot open PNG: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw RuntimeAbort("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("PNG decode failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE && expand_palette) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if ((color & PNG_COLOR_MASK_ALPHA) != 0) png_set_strip_alpha(png);
  if (expand_palette && (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)) png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  Decoded d;
  d.width = static_cast<int>(png_get_image_width(png, info));
  d.height = static_cast<int>(png_get_image_height(png, info));
  d.channels = static_cast<int>(png_get_channels(png, info));
  d.bytes.resize(static_cast<std::size_t>(d.height) * d.width * d.channels);
  std::vector<png_bytep> rows(static_cast<std::size_t>(d.height));
  for (int y = 0; y < d.height; ++y) rows[y] = d.bytes.data() + static_cast<std::size_t>(y) * d.width * d.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return d;
}

std::uint8_t encode_value(float v) {
  const double q = std::round((std::clamp(static_cast<double>(v), -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(q);
}

float decode_value(std::uint8_t b) { return static_cast<float>(b / 127.5 - 1.0); }

}  // namespace

std::vector<float> SegMap::one_hot() const {
  std::vector<float> out(labels.size() * face3d::kNumClasses, 0.0f);
  for (std::size_t i = 0; i < labels.size(); ++i) out[i * face3d::kNumClasses + labels[i]] = 1.0f;
  return out;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(image.data.size());
  std::transform(image.data.begin(), image.data.end(), bytes.begin(), encode_value);
  write_png_rows(path, image.height, image.width, PNG_COLOR_TYPE_RGB, bytes, 3, false);
}

Image read_png(const std::filesystem::path& path) {
  const Decoded d = read_png_rows(path, true);
  require(d.channels == 3, "expected an RGB PNG: " + path.string());
  Image img(d.height, d.width);
  std::transform(d.bytes.begin(), d.bytes.end(), img.data.begin(), decode_value);
  return img;
}

void write_seg_png(const SegMap& seg, const std::filesystem::path& path) {
  write_png_rows(path, seg.height, seg.width, PNG_COLOR_TYPE_PALETTE, seg.labels, 1, true);
}

SegMap read_seg_png(const std::filesystem::path& path) {
  const Decoded d = read_png_rows(path, false);
  require(d.channels == 1, "expected an indexed PNG: " + path.string());
  SegMap seg(d.height, d.width);
  seg.labels = d.bytes;
  for (auto c : seg.labels) require(c < face3d::kNumClasses, "segmentation class id out of range in " + path.string());
  return seg;
}

void write_rgb8_png(int height, int width, const std::vector<std::uint8_t>& rgb, const std::filesystem::path& path) {
  require(rgb.size() == static_cast<std::size_t>(height) * width * 3, "write_rgb8_png: size mismatch");
  write_png_rows(path, height, width, PNG_COLOR_TYPE_RGB, rgb, 3, false);
}

void write_flow(const FlowField& flow, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic("SFLW");
  w.u32(static_cast<std::uint32_t>(flow.height));
  w.u32(static_cast<std::uint32_t>(flow.width));
  w.array(std::span<const float>(flow.data));
  w.finish();
}

FlowField read_flow(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic("SFLW");
  const auto h = r.u32();
  const auto w = r.u32();
  require(h > 0 && w > 0 && h <= 8192 && w <= 8192, "SFLW: implausible size");
  FlowField f(static_cast<int>(h), static_cast<int>(w));
  r.array(std::span<float>(f.data));
  return f;
}

Image quantize_8bit(const Image& image) {
  Image out = image;
  for (auto& v : out.data) v = decode_value(encode_value(v));
  return out;
}

}  // namespace flowface
