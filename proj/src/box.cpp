#include "dqen/box.hpp"

#include <algorithm>
#include <cmath>

namespace dqen {

bool Box::valid() const {
  return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) && w >= 0 &&
         h >= 0;
}

Box Box::from_corners(double x0, double y0, double x1, double y1) {
  return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
}

namespace {

double intersection(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double ih = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  return iw * ih;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  const double inter = intersection(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
  const double inter = intersection(a, b);
  const double uni = a.area() + b.area() - inter;
  const double enclose = (std::max(a.x1(), b.x1()) - std::min(a.x0(), b.x0())) *
                         (std::max(a.y1(), b.y1()) - std::min(a.y0(), b.y0()));
  const double iou_v = uni > 0.0 ? inter / uni : 0.0;
  if (enclose <= 0.0) return iou_v;
  return iou_v - (enclose - uni) / enclose;
}

}  // namespace dqen
