// SPDX-License-Identifier: Apache-2.0
#include "latentlab/raster.hpp"

#include <cmath>
#include <cstring>

#include "latentlab/error.hpp"

namespace latentlab {

void Raster::put(long y, long x, double v) {
  if (!in_bounds(y, x)) return;
  for (std::size_t c = 0; c < channels; ++c) at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = v;
}

bool Raster::bit_equal(const Raster& other) const {
  return height == other.height && width == other.width && channels == other.channels &&
         pixels.size() == other.pixels.size() &&
         (pixels.empty() || std::memcmp(pixels.data(), other.pixels.data(), pixels.size() * sizeof(double)) == 0);
}

Raster hconcat(const Raster& left, const Raster& right) {
  if (left.height != right.height || left.channels != right.channels) throw ShapeError("hconcat: height mismatch");
  Raster out(left.height, left.width + right.width, left.channels);
  paste(out, left, 0, 0);
  paste(out, right, 0, static_cast<long>(left.width));
  return out;
}

void paste(Raster& dst, const Raster& src, long y, long x) {
  for (std::size_t sy = 0; sy < src.height; ++sy) {
    for (std::size_t sx = 0; sx < src.width; ++sx) {
      const long dy = y + static_cast<long>(sy), dx = x + static_cast<long>(sx);
      if (!dst.in_bounds(dy, dx)) continue;
      for (std::size_t c = 0; c < src.channels; ++c) {
        dst.at(static_cast<std::size_t>(dy), static_cast<std::size_t>(dx), c) = src.at(sy, sx, c);
      }
    }
  }
}

Raster crop(const Raster& src, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
  if (y + h > src.height || x + w > src.width) throw ShapeError("crop outside raster");
  Raster out(h, w, src.channels);
  for (std::size_t yy = 0; yy < h; ++yy) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      for (std::size_t c = 0; c < src.channels; ++c) out.at(yy, xx, c) = src.at(y + yy, x + xx, c);
    }
  }
  return out;
}

void fill_rect(Raster& r, long y0, long x0, long y1, long x1, double v) {
  for (long y = y0; y < y1; ++y) {
    for (long x = x0; x < x1; ++x) r.put(y, x, v);
  }
}

void outline_rect(Raster& r, long y0, long x0, long y1, long x1, double v) {
  for (long x = x0; x < x1; ++x) {
    r.put(y0, x, v);
    r.put(y1 - 1, x, v);
  }
  for (long y = y0; y < y1; ++y) {
    r.put(y, x0, v);
    r.put(y, x1 - 1, v);
  }
}

void fill_disk(Raster& r, double cy, double cx, double radius, double v) {
  const long y0 = static_cast<long>(std::floor(cy - radius)), y1 = static_cast<long>(std::ceil(cy + radius));
  const long x0 = static_cast<long>(std::floor(cx - radius)), x1 = static_cast<long>(std::ceil(cx + radius));
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      if (dy * dy + dx * dx <= radius * radius) r.put(y, x, v);
    }
  }
}

void draw_ring(Raster& r, long cy, long cx, long radius, double v) {
  outline_rect(r, cy - radius, cx - radius, cy + radius + 1, cx + radius + 1, v);
}

double sample_bilinear(const Raster& r, double y, double x, std::size_t c) {
  const double fy = std::floor(y), fx = std::floor(x);
  const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  const double wy = y - fy, wx = x - fx;
  auto px = [&](long yy, long xx) {
    return r.in_bounds(yy, xx) ? r.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), c) : 0.0;
  };
  return (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) + wy * ((1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1));
}

}  // namespace latentlab
