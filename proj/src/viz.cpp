#include "flowface/viz.hpp"

#include "flowface/common.hpp"

#include <algorithm>
#include <cmath>

namespace flowface::viz {

const std::vector<std::array<int, 3>>& color_wheel() {
  static const std::vector<std::array<int, 3>> wheel = [] {
    constexpr int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::vector<std::array<int, 3>> w;
    for (int i = 0; i < RY; ++i) w.push_back({255, 255 * i / RY, 0});
    for (int i = 0; i < YG; ++i) w.push_back({255 - 255 * i / YG, 255, 0});
    for (int i = 0; i < GC; ++i) w.push_back({0, 255, 255 * i / GC});
    for (int i = 0; i < CB; ++i) w.push_back({0, 255 - 255 * i / CB, 255});
    for (int i = 0; i < BM; ++i) w.push_back({255 * i / BM, 0, 255});
    for (int i = 0; i < MR; ++i) w.push_back({255, 0, 255 - 255 * i / MR});
    return w;
  }();
  return wheel;
}

std::array<std::uint8_t, 3> flow_color(double u, double v) {
  const auto& wheel = color_wheel();
  const int n = static_cast<int>(wheel.size());
  const double rad = std::hypot(u, v);
  const double a = std::atan2(-v, -u) / M_PI;
  const double fk = (a + 1.0) / 2.0 * (n - 1);
  const int k0 = static_cast<int>(fk);
  const int k1 = (k0 + 1) % n;
  const double f = fk - k0;
  std::array<std::uint8_t, 3> out{};
  for (int b = 0; b < 3; ++b) {
    double col = ((1 - f) * wheel[static_cast<std::size_t>(k0)][static_cast<std::size_t>(b)] +
                  f * wheel[static_cast<std::size_t>(k1)][static_cast<std::size_t>(b)]) / 255.0;
    col = rad <= 1 ? 1 - rad * (1 - col) : col * 0.75;
    out[static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(std::lround(255.0 * col));
  }
  return out;
}

std::vector<std::uint8_t> flow_to_rgb(const FlowField& flow, double max_motion) {
  double maxrad = max_motion;
  if (maxrad <= 0) {
    maxrad = 0;
    for (int y = 0; y < flow.height; ++y)
      for (int x = 0; x < flow.width; ++x) maxrad = std::max(maxrad, std::hypot<double>(flow.dx(y, x), flow.dy(y, x)));
  }
  if (maxrad <= 0) maxrad = 1;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(flow.height) * flow.width * 3);
  for (int y = 0; y < flow.height; ++y)
    for (int x = 0; x < flow.width; ++x) {
      const auto c = flow_color(flow.dx(y, x) / maxrad, flow.dy(y, x) / maxrad);
      std::copy(c.begin(), c.end(), rgb.begin() + (static_cast<std::ptrdiff_t>(y) * flow.width + x) * 3);
    }
  return rgb;
}

Image image_grid(const std::vector<std::vector<Image>>& rows, int pad) {
  require(!rows.empty() && !rows.front().empty(), "image_grid: empty grid");
  const int th = rows.front().front().height, tw = rows.front().front().width;
  const int cols = static_cast<int>(rows.front().size());
  for (const auto& r : rows) {
    require(static_cast<int>(r.size()) == cols, "image_grid: rows differ in length");
    for (const auto& img : r) require(img.height == th && img.width == tw, "image_grid: tiles differ in size");
  }
  const int nr = static_cast<int>(rows.size());
  Image out(nr * th + (nr + 1) * pad, cols * tw + (cols + 1) * pad, 1.0f);
  for (int r = 0; r < nr; ++r)
    for (int c = 0; c < cols; ++c) {
      const auto& img = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      const int oy = pad + r * (th + pad), ox = pad + c * (tw + pad);
      for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x)
          for (int k = 0; k < 3; ++k) out.at(oy + y, ox + x, k) = img.at(y, x, k);
    }
  return out;
}

Image attention_overlay(const Image& source, const torch::Tensor& attention_row, int grid) {
  require(grid > 0 && attention_row.numel() == static_cast<std::int64_t>(grid) * grid, "attention_overlay: row length must be grid^2");
  require(source.height % grid == 0 && source.width % grid == 0, "attention_overlay: image not divisible by the grid");
  auto row = attention_row.detach().to(torch::kFloat64).flatten().clamp_min(0.0);
  row = row / row.sum().clamp_min(1e-12);
  row = row / row.max().clamp_min(1e-12);
  auto a = row.accessor<double, 1>();
  const int ph = source.height / grid, pw = source.width / grid;
  Image out = source;
  for (int y = 0; y < source.height; ++y)
    for (int x = 0; x < source.width; ++x) {
      const double w = a[(y / ph) * grid + x / pw];
      // Dim the source and add a red heat layer.
      const double base = 0.5 * (source.at(y, x, 0) + source.at(y, x, 1) + source.at(y, x, 2)) / 3.0 - 0.2;
      out.at(y, x, 0) = static_cast<float>(std::clamp(base + 1.6 * w, -1.0, 1.0));
      out.at(y, x, 1) = static_cast<float>(std::clamp(base + 0.6 * w * w, -1.0, 1.0));
      out.at(y, x, 2) = static_cast<float>(std::clamp(base, -1.0, 1.0));
    }
  return out;
}

Image mark_patch(const Image& target, int patch_index, int grid) {
  require(patch_index >= 0 && patch_index < grid * grid, "mark_patch: patch index out of range");
  const int ph = target.height / grid, pw = target.width / grid;
  const int y0 = (patch_index / grid) * ph, x0 = (patch_index % grid) * pw;
  Image out = target;
  for (int y = y0; y < y0 + ph; ++y)
    for (int x = x0; x < x0 + pw; ++x) {
      if (y != y0 && y != y0 + ph - 1 && x != x0 && x != x0 + pw - 1) continue;
      out.at(y, x, 0) = 1.0f;
      out.at(y, x, 1) = -1.0f;
      out.at(y, x, 2) = -1.0f;
    }
  return out;
}

}  // namespace flowface::viz
