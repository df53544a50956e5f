#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "viact/geometry.hpp"

namespace viact {

using Rgb = std::array<uint8_t, 3>;

/// 8-bit RGB raster.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  ///< row-major RGB

  Image() = default;
  Image(int w, int h, Rgb fill = {0, 0, 0});
  void set(int x, int y, Rgb c);
  Rgb get(int x, int y) const;
};

/// Grayscale image from intensities in [0, 1] (clamped).
Image gray_image(std::span<const float> values, int height, int width);

/// Perceptual colormap (viridis control points, linear in between) over
/// t in [0, 1].
Rgb colormap(double t);

/// Filled disc, clipped to the image.
void draw_disc(Image& image, double x, double y, double radius, Rgb color);

/// Copies `tile` into `canvas` with its top-left corner at (x, y).
void blit(Image& canvas, const Image& tile, int x, int y);

/// Frame with each point drawn in the colormap color of its score.
Image render_attention(std::span<const float> frame, int height, int width, const PointSet& points,
                       std::span<const double> scores);

void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace viact
