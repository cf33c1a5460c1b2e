#pragma once

#include <array>

namespace dqen {

// Normalized center-format box; all coordinates are fractions of the image.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  [[nodiscard]] double x0() const { return cx - 0.5 * w; }
  [[nodiscard]] double y0() const { return cy - 0.5 * h; }
  [[nodiscard]] double x1() const { return cx + 0.5 * w; }
  [[nodiscard]] double y1() const { return cy + 0.5 * h; }
  [[nodiscard]] double area() const { return w * h; }
  [[nodiscard]] bool valid() const;
  [[nodiscard]] std::array<double, 4> as_array() const { return {cx, cy, w, h}; }

  static Box from_corners(double x0, double y0, double x1, double y1);
  static Box from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }

  bool operator==(const Box&) const = default;
};

double iou(const Box& a, const Box& b);
// Generalized IoU in [-1, 1].
double giou(const Box& a, const Box& b);

}  // namespace dqen
