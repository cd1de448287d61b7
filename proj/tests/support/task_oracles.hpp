// SPDX-License-Identifier: Apache-2.0
//
// Test-side re-derivations of generator answers from the raster and meta,
// written without calling the library's geometry or oracle code.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "latentlab/taskgen.hpp"

namespace latentlab::testing {

struct RawBox {
  long x0, y0, x1, y1;
};

inline RawBox raw_box(const nlohmann::json& j) {
  return {j.at(0).get<long>(), j.at(1).get<long>(), j.at(2).get<long>(), j.at(3).get<long>()};
}

inline long raw_overlap(const RawBox& a, const RawBox& b) {
  const long w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const long h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return w > 0 && h > 0 ? w * h : 0;
}

inline double raw_iou(const RawBox& a, const RawBox& b) {
  const long inter = raw_overlap(a, b);
  const long uni = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// IoU between the answer box and the other box, from meta.
inline double localization_iou(const TaskExample& ex) {
  const RawBox a = raw_box(ex.meta.at("boxes").at("A")), b = raw_box(ex.meta.at("boxes").at("B"));
  return raw_iou(a, b);
}

/// Number of target-kind components by 8-connected flood fill over content
/// pixels (channel 0 in (0, 0.6]). A component that fills a square bounding
/// box is a square; anything else is a disk.
inline int flood_fill_count(const TaskExample& ex) {
  const Raster& r = ex.image;
  const long h = static_cast<long>(r.height), w = static_cast<long>(r.width);
  const auto content = [&](long y, long x) {
    const double v = r.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), 0);
    return v > 0.0 && v <= intensity::content_max;
  };
  std::vector<char> seen(static_cast<std::size_t>(h * w), 0);
  int squares = 0, disks = 0;
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      if (seen[static_cast<std::size_t>(y * w + x)] || !content(y, x)) continue;
      std::vector<std::pair<long, long>> todo = {{y, x}};
      seen[static_cast<std::size_t>(y * w + x)] = 1;
      long n = 0, minx = x, maxx = x, miny = y, maxy = y;
      while (!todo.empty()) {
        const auto [cy, cx] = todo.back();
        todo.pop_back();
        ++n;
        minx = std::min(minx, cx), maxx = std::max(maxx, cx), miny = std::min(miny, cy), maxy = std::max(maxy, cy);
        for (long dy = -1; dy <= 1; ++dy) {
          for (long dx = -1; dx <= 1; ++dx) {
            const long ny = cy + dy, nx = cx + dx;
            if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
            if (seen[static_cast<std::size_t>(ny * w + nx)] || !content(ny, nx)) continue;
            seen[static_cast<std::size_t>(ny * w + nx)] = 1;
            todo.emplace_back(ny, nx);
          }
        }
      }
      const long bw = maxx - minx + 1, bh = maxy - miny + 1;
      (bw == bh && n == bw * bh ? squares : disks) += 1;
    }
  }
  return ex.meta.at("target") == "square" ? squares : disks;
}

inline bool jigsaw_disjoint(const TaskExample& ex) {
  return raw_overlap(raw_box(ex.meta.at("gold")), raw_box(ex.meta.at("distractor"))) == 0;
}

/// Label from the stored luminances under the relative-difference rule.
inline int reflectance_rule(double ya, double yb) {
  const double rel = std::abs(ya - yb) / std::max({ya, yb, 1e-8});
  if (rel <= 0.10) return 2;
  return ya < yb ? 0 : 1;
}

/// Distance between the answer candidate and the analytic image of REF.
inline double correspondence_error(const TaskExample& ex) {
  const auto m = ex.meta.at("homography").get<std::vector<double>>();
  const double x = ex.meta.at("ref").at(0).get<double>(), y = ex.meta.at("ref").at(1).get<double>();
  const double w = m[6] * x + m[7] * y + m[8];
  const double tx = (m[0] * x + m[1] * y + m[2]) / w, ty = (m[3] * x + m[4] * y + m[5]) / w;
  const std::string letter(1, static_cast<char>('A' + ex.answer.value));
  const auto& c = ex.meta.at("candidates").at(letter);
  return std::hypot(c.at(0).get<double>() - tx, c.at(1).get<double>() - ty);
}

}  // namespace latentlab::testing
