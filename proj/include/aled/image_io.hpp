#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "aled/core_types.hpp"

namespace aled {

struct ImageRGB {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // 3 bytes per pixel, row-major

  ImageRGB() = default;
  ImageRGB(int w, int h, std::uint8_t r = 255, std::uint8_t g = 255, std::uint8_t b = 255);
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

void write_png(const std::filesystem::path& path, const ImageRGB& img);

/// Inferno-style color scale over [lo, hi].
ImageRGB colormap_depth(const Tensor& meters, double lo, double hi);

/// Positive events blue, negative red, white background.
ImageRGB draw_events(const EventWindow& window, int height, int width);

/// Sparse depth: black background, colormapped measurements.
ImageRGB draw_sparse_depth(const SparseDepthImage& sparse, double lo, double hi);

/// Fig.1-style thresholded change map at the window's event pixels: three
/// class colors over a white background.
ImageRGB draw_change_overlay(const DepthPair& pred_m, const EventWindow& window, double tau);

/// Stacks images vertically with a small white gap (widths must match).
ImageRGB vstack(const std::vector<ImageRGB>& images, int gap = 4);

}  // namespace aled
