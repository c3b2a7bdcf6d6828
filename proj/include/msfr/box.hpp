#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace msfr {

/// Axis-aligned box in continuous pixel coordinates; width = x2 - x1.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double cx() const { return x1 + 0.5 * width(); }
  double cy() const { return y1 + 0.5 * height(); }
  double area() const { return width() * height(); }
  bool valid() const { return x2 > x1 && y2 > y1; }

  bool operator==(const BBox&) const = default;
};

struct Deltas {
  double tx = 0, ty = 0, tw = 0, th = 0;
};

/// Half-open rectangle of feature-map cells [x1, x2) x [y1, y2).
struct GridRect {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  int width() const { return x2 - x1; }
  int height() const { return y2 - y1; }
  bool operator==(const GridRect&) const = default;
};

double iou(const BBox& a, const BBox& b);

Deltas encode_deltas(const BBox& target, const BBox& anchor);

/// Upper bound applied to tw/th before exponentiation.
inline constexpr double kMaxLogScale = 6.907755278982137;  // ln(1000)
BBox decode_deltas(const Deltas& d, const BBox& anchor);

/// Clamps to [0, w] x [0, h]; nothing when a clamped side is below one pixel.
std::optional<BBox> clip_box(const BBox& b, double image_w, double image_h);

/// Greedy NMS. Visits boxes by descending score (ties by index) and drops any
/// box whose IoU with an already-kept box exceeds the threshold. Returns kept
/// indices in visit order.
std::vector<std::size_t> nms(std::span<const BBox> boxes, std::span<const double> scores, double iou_threshold);

/// Indices sorted by descending score, ties by ascending index.
std::vector<std::size_t> order_by_score(std::span<const double> scores);

/// floor(x1/s), floor(y1/s), ceil(x2/s), ceil(y2/s), with at least one cell per side.
GridRect project_roi(const BBox& b, int stride);

}  // namespace msfr
