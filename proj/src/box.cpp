#include "msfr/box.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace msfr {

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

Deltas encode_deltas(const BBox& target, const BBox& anchor) {
  return {(target.cx() - anchor.cx()) / anchor.width(), (target.cy() - anchor.cy()) / anchor.height(),
          std::log(target.width() / anchor.width()), std::log(target.height() / anchor.height())};
}

BBox decode_deltas(const Deltas& d, const BBox& anchor) {
  const double w = anchor.width() * std::exp(std::min(d.tw, kMaxLogScale));
  const double h = anchor.height() * std::exp(std::min(d.th, kMaxLogScale));
  const double cx = anchor.cx() + d.tx * anchor.width();
  const double cy = anchor.cy() + d.ty * anchor.height();
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::optional<BBox> clip_box(const BBox& b, double image_w, double image_h) {
  const BBox c{std::clamp(b.x1, 0.0, image_w), std::clamp(b.y1, 0.0, image_h), std::clamp(b.x2, 0.0, image_w),
               std::clamp(b.y2, 0.0, image_h)};
  if (c.width() < 1.0 || c.height() < 1.0) return std::nullopt;
  return c;
}

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::vector<std::size_t> nms(std::span<const BBox> boxes, std::span<const double> scores, double iou_threshold) {
  if (boxes.size() != scores.size()) throw std::invalid_argument("nms: boxes and scores differ in length");
  std::vector<std::size_t> keep;
  for (std::size_t i : order_by_score(scores)) {
    const bool suppressed = std::any_of(keep.begin(), keep.end(),
                                        [&](std::size_t k) { return iou(boxes[k], boxes[i]) > iou_threshold; });
    if (!suppressed) keep.push_back(i);
  }
  return keep;
}

GridRect project_roi(const BBox& b, int stride) {
  if (stride < 1) throw std::invalid_argument("project_roi: stride must be positive");
  const double s = stride;
  GridRect r{static_cast<int>(std::floor(b.x1 / s)), static_cast<int>(std::floor(b.y1 / s)),
             static_cast<int>(std::ceil(b.x2 / s)), static_cast<int>(std::ceil(b.y2 / s))};
  r.x2 = std::max(r.x2, r.x1 + 1);
  r.y2 = std::max(r.y2, r.y1 + 1);
  return r;
}

}  // namespace msfr
