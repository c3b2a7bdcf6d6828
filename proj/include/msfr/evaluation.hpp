#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msfr/box.hpp"
#include "msfr/detection.hpp"

namespace msfr {

struct EvalConfig {
  double iou_threshold = 0.5;
  // GT height splits: small < small_max <= medium < medium_max <= large
  double small_max = 24.0;
  double medium_max = 64.0;

  void validate() const;
};

struct MatchResult {
  std::vector<bool> true_positive;  // per detection
  std::vector<int> matched_gt;      // per detection, -1 for a false positive
};

/// Greedy discrete-criterion matching. `dets` must already be sorted by
/// descending score; each one claims the unmatched GT of highest IoU provided
/// that IoU is strictly above the threshold (ties go to the lower GT index).
MatchResult match_detections(std::span<const Detection> dets, std::span<const BBox> gts, double iou_threshold);

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct RocPoint {
  int false_positives = 0;
  double true_positive_rate = 0.0;
};

struct EvalReport {
  int n_gt = 0;
  int n_det = 0;
  std::vector<bool> flags;         // global score order
  std::vector<PrPoint> pr_points;  // empty when n_gt == 0
  std::optional<double> ap;        // undefined when n_gt == 0
  std::vector<RocPoint> roc_points;
};

/// Prefix precision/recall over flags in global score order and the
/// all-points interpolated AP.
EvalReport pr_curve_ap(const std::vector<bool>& flags, int n_gt);

/// (cumulative FP, cumulative TP / n_gt) after every detection.
std::vector<RocPoint> roc_curve(const std::vector<bool>& flags, int n_gt);

struct AnnotatedImage {
  std::string id;
  std::vector<BBox> boxes;
};

struct DatasetReport {
  EvalReport overall;
  EvalReport small;
  EvalReport medium;
  EvalReport large;
};

/// Matching is done per image against every GT of that image. For a split, a
/// detection matched to a GT inside the split counts as TP, one matched to a
/// GT outside it is left out, and an unmatched one is a FP only when its own
/// height falls in the split. Global order: score descending, then image
/// order, then per-image input order.
/// Throws std::invalid_argument naming any detection id without annotation.
DatasetReport evaluate_dataset(std::span<const AnnotatedImage> images,
                               const std::map<std::string, std::vector<Detection>>& detections,
                               const EvalConfig& cfg = {});

/// Text report: ap_* / n_gt / n_det fields, then the overall PR and ROC tables.
std::string format_report(const DatasetReport& report);

}  // namespace msfr
