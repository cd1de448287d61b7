// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

namespace latentlab {

/// Row-major grayscale/multichannel image with intensities in [0, 1].
struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  Raster() = default;
  Raster(std::size_t h, std::size_t w, std::size_t c = 1, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const { return pixels[(y * width + x) * channels + c]; }
  bool in_bounds(long y, long x) const {
    return y >= 0 && x >= 0 && static_cast<std::size_t>(y) < height && static_cast<std::size_t>(x) < width;
  }
  /// Sets every channel of pixel (y, x) when it lies inside the raster.
  void put(long y, long x, double v);

  bool bit_equal(const Raster& other) const;
};

/// Side-by-side composition; heights must match.
Raster hconcat(const Raster& left, const Raster& right);
/// Copies `src` into `dst` with its top-left corner at (y, x), clipping at the borders.
void paste(Raster& dst, const Raster& src, long y, long x);
Raster crop(const Raster& src, std::size_t y, std::size_t x, std::size_t h, std::size_t w);

void fill_rect(Raster& r, long y0, long x0, long y1, long x1, double v);
/// One-pixel outline of the half-open rectangle [x0, x1) x [y0, y1).
void outline_rect(Raster& r, long y0, long x0, long y1, long x1, double v);
void fill_disk(Raster& r, double cy, double cx, double radius, double v);
/// Square ring at Chebyshev distance `radius` around (cy, cx).
void draw_ring(Raster& r, long cy, long cx, long radius, double v);

/// Bilinear sample with zero outside the raster.
double sample_bilinear(const Raster& r, double y, double x, std::size_t c = 0);

}  // namespace latentlab
