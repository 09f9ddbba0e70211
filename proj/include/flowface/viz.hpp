#pragma once

// Figure-style outputs: Middlebury flow colouring, image grids, attention overlays.

#include "flowface/image.hpp"

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <vector>

namespace flowface::viz {

/// Middlebury colour wheel (55 hues), RGB 0..255.
const std::vector<std::array<int, 3>>& color_wheel();

/// Colour of a flow vector already divided by the normalizing radius.
/// Zero maps to white; |v| > 1 is darkened.
std::array<std::uint8_t, 3> flow_color(double u, double v);

/// H x W x 3 interleaved RGB; `max_motion` <= 0 normalizes by the largest vector.
std::vector<std::uint8_t> flow_to_rgb(const FlowField& flow, double max_motion = 0.0);

/// rows x cols tiles of equal size, row-major, separated by `pad` pixels of white.
Image image_grid(const std::vector<std::vector<Image>>& rows, int pad = 2);

/// Source image tinted by an attention row over its patch grid. The row is
/// renormalized to sum to 1 and scaled by its maximum before colouring.
Image attention_overlay(const Image& source, const torch::Tensor& attention_row, int grid);

/// Target image with one patch outlined.
Image mark_patch(const Image& target, int patch_index, int grid);

}  // namespace flowface::viz
