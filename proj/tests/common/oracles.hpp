#pragma once

#include <algorithm>
#include <set>
#include <vector>

#include "msfr/box.hpp"
#include "msfr/detection.hpp"

namespace msfr::test {

// Counts unit pixels covered by integer-cornered boxes.
inline double pixel_iou(const BBox& a, const BBox& b) {
  const int lo = int(std::min({a.x1, a.y1, b.x1, b.y1}));
  const int hi = int(std::max({a.x2, a.y2, b.x2, b.y2}));
  int inter = 0, uni = 0;
  for (int y = lo; y < hi; ++y) {
    for (int x = lo; x < hi; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const bool in_a = px > a.x1 && px < a.x2 && py > a.y1 && py < a.y2;
      const bool in_b = px > b.x1 && px < b.x2 && py > b.y1 && py < b.y2;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : double(inter) / uni;
}

inline std::vector<std::size_t> reference_nms(const std::vector<BBox>& boxes, const std::vector<double>& scores,
                                              double thr) {
  const std::size_t n = boxes.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  // insertion sort: score descending, index ascending
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = i; j > 0; --j) {
      const std::size_t a = order[j - 1], b = order[j];
      const bool swap = scores[b] > scores[a] || (scores[b] == scores[a] && b < a);
      if (!swap) break;
      std::swap(order[j - 1], order[j]);
    }
  }
  std::vector<bool> removed(n, false);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = order[i];
    if (removed[a]) continue;
    keep.push_back(a);
    for (std::size_t j = i + 1; j < n; ++j) {
      if (pixel_iou(boxes[a], boxes[order[j]]) > thr) removed[order[j]] = true;
    }
  }
  return keep;
}

inline int overlap_pixels(const BBox& a, const BBox& b) {
  const int w = std::max(0, int(std::min(a.x2, b.x2) - std::max(a.x1, b.x1)));
  const int h = std::max(0, int(std::min(a.y2, b.y2) - std::max(a.y1, b.y1)));
  return w * h;
}

// Explicit enumeration over integer boxes: IoU compared as exact rationals.
inline std::vector<bool> reference_match(const std::vector<Detection>& dets, const std::vector<BBox>& gts, int thr_num,
                                  int thr_den) {
  std::vector<bool> taken(gts.size(), false), flags;
  for (const Detection& d : dets) {
    int best = -1;
    long best_i = 0, best_u = 1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const long i = overlap_pixels(d.box, gts[g]);
      const long u = long(d.box.area() + gts[g].area()) - i;
      const bool above = i * thr_den > long(thr_num) * u;
      const bool better = best < 0 || i * best_u > best_i * u;
      if (above && better) {
        best = int(g);
        best_i = i;
        best_u = u;
      }
    }
    if (best >= 0) taken[std::size_t(best)] = true;
    flags.push_back(best >= 0);
  }
  return flags;
}

// AP as the sum over distinct recall levels of the best precision at any
// prefix reaching at least that recall.
inline double brute_force_ap(const std::vector<bool>& flags, int n_gt) {
  std::vector<double> rec, prec;
  int tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    tp += flags[i];
    rec.push_back(double(tp) / n_gt);
    prec.push_back(double(tp) / double(i + 1));
  }
  std::set<int> levels;
  tp = 0;
  for (bool f : flags) levels.insert(tp += f);
  double ap = 0.0;
  int prev = 0;
  for (int k : levels) {
    if (k == 0) continue;
    double best = 0.0;
    for (std::size_t i = 0; i < rec.size(); ++i) {
      if (rec[i] >= double(k) / n_gt) best = std::max(best, prec[i]);
    }
    ap += double(k - prev) / n_gt * best;
    prev = k;
  }
  return ap;
}

}  // namespace msfr::test
