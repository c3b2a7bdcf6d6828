#include "msfr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace msfr {

void EvalConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) throw std::invalid_argument("iou_threshold must be in (0, 1)");
  if (!(small_max > 0.0 && small_max < medium_max) || !std::isfinite(medium_max)) {
    throw std::invalid_argument("split bounds must satisfy 0 < small_max < medium_max");
  }
}

MatchResult match_detections(std::span<const Detection> dets, std::span<const BBox> gts, double iou_threshold) {
  MatchResult m;
  m.true_positive.assign(dets.size(), false);
  m.matched_gt.assign(dets.size(), -1);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(dets[d].box, gts[g]);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = true;
      m.true_positive[d] = true;
      m.matched_gt[d] = best;
    }
  }
  return m;
}

EvalReport pr_curve_ap(const std::vector<bool>& flags, int n_gt) {
  if (n_gt < 0) throw std::invalid_argument("pr_curve_ap: negative n_gt");
  EvalReport r;
  r.n_gt = n_gt;
  r.n_det = static_cast<int>(flags.size());
  r.flags.assign(flags.begin(), flags.end());
  r.roc_points = roc_curve(flags, n_gt);
  if (n_gt == 0) return r;

  int tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    tp += flags[i] ? 1 : 0;
    r.pr_points.push_back({static_cast<double>(tp) / n_gt, static_cast<double>(tp) / static_cast<double>(i + 1)});
  }
  std::vector<double> envelope(r.pr_points.size());
  double running = 0.0;
  for (std::size_t i = r.pr_points.size(); i-- > 0;) {
    running = std::max(running, r.pr_points[i].precision);
    envelope[i] = running;
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < r.pr_points.size(); ++i) {
    ap += (r.pr_points[i].recall - prev_recall) * envelope[i];
    prev_recall = r.pr_points[i].recall;
  }
  r.ap = ap;
  return r;
}

std::vector<RocPoint> roc_curve(const std::vector<bool>& flags, int n_gt) {
  std::vector<RocPoint> pts;
  if (n_gt <= 0) return pts;
  int tp = 0, fp = 0;
  for (bool f : flags) {
    (f ? tp : fp) += 1;
    pts.push_back({fp, static_cast<double>(tp) / n_gt});
  }
  return pts;
}

namespace {

enum class Split { kSmall, kMedium, kLarge };

Split split_of(double height, const EvalConfig& cfg) {
  if (height < cfg.small_max) return Split::kSmall;
  if (height < cfg.medium_max) return Split::kMedium;
  return Split::kLarge;
}

struct Scored {
  double score;
  std::size_t image;
  std::size_t index;
  bool tp;
  int gt;
  double height;
};

}  // namespace

DatasetReport evaluate_dataset(std::span<const AnnotatedImage> images,
                               const std::map<std::string, std::vector<Detection>>& detections,
                               const EvalConfig& cfg) {
  cfg.validate();
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!by_id.emplace(images[i].id, i).second) {
      throw std::invalid_argument("duplicate image id in annotations: " + images[i].id);
    }
  }
  for (const auto& [id, dets] : detections) {
    if (!by_id.count(id)) throw std::invalid_argument("detections reference unknown image: " + id);
  }

  std::vector<Scored> all;
  int n_gt[3] = {0, 0, 0};
  int n_gt_total = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const AnnotatedImage& img = images[i];
    for (const BBox& g : img.boxes) ++n_gt[static_cast<int>(split_of(g.height(), cfg))];
    n_gt_total += static_cast<int>(img.boxes.size());

    auto it = detections.find(img.id);
    if (it == detections.end()) continue;
    std::vector<Detection> dets = it->second;
    std::vector<double> scores;
    for (const Detection& d : dets) {
      if (!std::isfinite(d.score)) throw std::invalid_argument("non-finite detection score in image " + img.id);
      scores.push_back(d.score);
    }
    const std::vector<std::size_t> order = order_by_score(scores);
    std::vector<Detection> sorted;
    for (std::size_t k : order) sorted.push_back(dets[k]);
    const MatchResult m = match_detections(sorted, img.boxes, cfg.iou_threshold);
    for (std::size_t k = 0; k < sorted.size(); ++k) {
      all.push_back({sorted[k].score, i, order[k], m.true_positive[k], m.matched_gt[k], sorted[k].box.height()});
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.index < b.index;
  });

  std::vector<bool> overall;
  std::vector<bool> per_split[3];
  for (const Scored& s : all) {
    overall.push_back(s.tp);
    if (s.gt >= 0) {
      const double gh = images[s.image].boxes[static_cast<std::size_t>(s.gt)].height();
      per_split[static_cast<int>(split_of(gh, cfg))].push_back(true);
    } else {
      per_split[static_cast<int>(split_of(s.height, cfg))].push_back(false);
    }
  }
  DatasetReport rep;
  rep.overall = pr_curve_ap(overall, n_gt_total);
  rep.small = pr_curve_ap(per_split[0], n_gt[0]);
  rep.medium = pr_curve_ap(per_split[1], n_gt[1]);
  rep.large = pr_curve_ap(per_split[2], n_gt[2]);
  return rep;
}

namespace {

void append(std::string& out, const char* fmt, auto... args) {
  char buf[128];
  std::snprintf(buf, sizeof buf, fmt, args...);
  out += buf;
}

void append_ap(std::string& out, const char* name, const EvalReport& r) {
  if (r.ap) {
    append(out, "%s %.6f\n", name, *r.ap);
  } else {
    append(out, "%s undefined\n", name);
  }
}

}  // namespace

std::string format_report(const DatasetReport& report) {
  std::string out;
  append_ap(out, "ap_overall", report.overall);
  append_ap(out, "ap_small", report.small);
  append_ap(out, "ap_medium", report.medium);
  append_ap(out, "ap_large", report.large);
  append(out, "n_gt %d\n", report.overall.n_gt);
  append(out, "n_det %d\n", report.overall.n_det);
  out += "PR recall precision\n";
  for (const PrPoint& p : report.overall.pr_points) append(out, "%.6f %.6f\n", p.recall, p.precision);
  out += "ROC false_positives true_positive_rate\n";
  for (const RocPoint& p : report.overall.roc_points) append(out, "%d %.6f\n", p.false_positives, p.true_positive_rate);
  return out;
}

}  // namespace msfr
