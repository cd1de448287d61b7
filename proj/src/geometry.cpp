// SPDX-License-Identifier: Apache-2.0
#include "latentlab/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "latentlab/error.hpp"

namespace latentlab {

long intersection_area(const Box& a, const Box& b) {
  const int w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const int h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (w <= 0 || h <= 0) return 0;
  return static_cast<long>(w) * h;
}

double iou(const Box& a, const Box& b) {
  const long inter = intersection_area(a, b);
  const long uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

void to_json(nlohmann::json& j, const Box& b) { j = nlohmann::json::array({b.x0, b.y0, b.x1, b.y1}); }

void from_json(const nlohmann::json& j, Box& b) {
  b = Box{j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

void to_json(nlohmann::json& j, const Point& p) { j = nlohmann::json::array({p.x, p.y}); }
void from_json(const nlohmann::json& j, Point& p) { p = Point{j.at(0).get<double>(), j.at(1).get<double>()}; }

Homography Homography::translation(double dx, double dy) { return Homography({1, 0, dx, 0, 1, dy, 0, 0, 1}); }

Homography Homography::about_center(double cx, double cy, double angle, double scale_x, double scale_y, double shear,
                                    double tx, double ty, double p1, double p2) {
  const double c = std::cos(angle), s = std::sin(angle);
  // Linear part: R * Shear * Scale
  const double a00 = c * scale_x, a01 = (c * shear - s) * scale_y;
  const double a10 = s * scale_x, a11 = (s * shear + c) * scale_y;
  const Homography to_origin = translation(-cx, -cy);
  const Homography linear({a00, a01, 0, a10, a11, 0, p1, p2, 1});
  const Homography back = translation(cx + tx, cy + ty);
  return back * linear * to_origin;
}

Point Homography::apply(Point p) const {
  const double x = m_[0] * p.x + m_[1] * p.y + m_[2];
  const double y = m_[3] * p.x + m_[4] * p.y + m_[5];
  const double w = m_[6] * p.x + m_[7] * p.y + m_[8];
  if (std::abs(w) < 1e-12) throw NumericError("homography maps point to infinity");
  return {x / w, y / w};
}

Homography Homography::inverse() const {
  const auto& m = m_;
  const double c00 = m[4] * m[8] - m[5] * m[7];
  const double c01 = m[5] * m[6] - m[3] * m[8];
  const double c02 = m[3] * m[7] - m[4] * m[6];
  const double det = m[0] * c00 + m[1] * c01 + m[2] * c02;
  if (std::abs(det) < 1e-15) throw NumericError("singular homography");
  const double inv = 1.0 / det;
  return Homography({c00 * inv, (m[2] * m[7] - m[1] * m[8]) * inv, (m[1] * m[5] - m[2] * m[4]) * inv,
                     c01 * inv, (m[0] * m[8] - m[2] * m[6]) * inv, (m[2] * m[3] - m[0] * m[5]) * inv,
                     c02 * inv, (m[1] * m[6] - m[0] * m[7]) * inv, (m[0] * m[4] - m[1] * m[3]) * inv});
}

Homography Homography::operator*(const Homography& rhs) const {
  std::array<double, 9> out{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += m_[i * 3 + k] * rhs.m_[k * 3 + j];
      out[i * 3 + j] = s;
    }
  }
  return Homography(out);
}

}  // namespace latentlab
