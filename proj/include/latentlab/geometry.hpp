// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>

#include <json.hpp>

namespace latentlab {

/// Half-open pixel box [x0, x1) x [y0, y1).
struct Box {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long area() const { return static_cast<long>(width()) * height(); }
  bool valid_within(int w, int h) const { return x0 < x1 && y0 < y1 && x0 >= 0 && y0 >= 0 && x1 <= w && y1 <= h; }
  double center_x() const { return 0.5 * (x0 + x1); }
  double center_y() const { return 0.5 * (y0 + y1); }
  bool operator==(const Box&) const = default;
};

long intersection_area(const Box& a, const Box& b);
double iou(const Box& a, const Box& b);

void to_json(nlohmann::json& j, const Box& b);
void from_json(const nlohmann::json& j, Box& b);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

double distance(Point a, Point b);

void to_json(nlohmann::json& j, const Point& p);
void from_json(const nlohmann::json& j, Point& p);

/// Row-major 3x3 projective transform acting on (x, y, 1).
class Homography {
 public:
  Homography() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}
  explicit Homography(const std::array<double, 9>& m) : m_(m) {}

  static Homography translation(double dx, double dy);
  /// Rotation/scale/shear about (cx, cy), then translation, plus small
  /// perspective terms (p1, p2) measured relative to the centre.
  static Homography about_center(double cx, double cy, double angle, double scale_x, double scale_y, double shear,
                                 double tx, double ty, double p1, double p2);

  Point apply(Point p) const;
  Homography inverse() const;
  Homography operator*(const Homography& rhs) const;
  const std::array<double, 9>& matrix() const { return m_; }

 private:
  std::array<double, 9> m_;
};

}  // namespace latentlab
