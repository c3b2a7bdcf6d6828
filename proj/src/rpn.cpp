#include "msfr/rpn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msfr {

std::vector<BBox> generate_anchors(int feat_h, int feat_w, const AnchorConfig& cfg) {
  if (feat_h < 1 || feat_w < 1) throw std::invalid_argument("generate_anchors: feature extent must be positive");
  std::vector<BBox> anchors;
  anchors.reserve(static_cast<std::size_t>(feat_h) * feat_w * cfg.per_cell());
  const double s = cfg.base_stride;
  for (int y = 0; y < feat_h; ++y) {
    for (int x = 0; x < feat_w; ++x) {
      const double cx = (x + 0.5) * s;
      const double cy = (y + 0.5) * s;
      for (double ratio : cfg.ratios) {
        for (double scale : cfg.scales) {
          const double side = scale * s;
          const double w = side / std::sqrt(ratio);
          const double h = side * std::sqrt(ratio);
          anchors.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
        }
      }
    }
  }
  return anchors;
}

RpnHeadParams::RpnHeadParams(int in_channels, int hidden, int anchors_per_cell)
    : conv("rpn.conv", in_channels, hidden, 3, 1, 1),
      cls("rpn.cls", hidden, 2 * anchors_per_cell, 1, 1, 0),
      bbox("rpn.bbox", hidden, 4 * anchors_per_cell, 1, 1, 0) {}

std::vector<Param*> RpnHeadParams::params() {
  return {&conv.weight, &conv.bias, &cls.weight, &cls.bias, &bbox.weight, &bbox.bias};
}

RpnOutput rpn_forward(const Tensor& fused_map, const RpnHeadParams& head) {
  RpnOutput out;
  out.hidden = relu(conv2d(fused_map, head.conv));
  out.logits = conv2d(out.hidden, head.cls);
  out.deltas = conv2d(out.hidden, head.bbox);
  return out;
}

Tensor rpn_backward(const Tensor& fused_map, RpnHeadParams& head, const RpnOutput& out, const Tensor& grad_logits,
                    const Tensor& grad_deltas) {
  Tensor dhidden = conv2d_backward(out.hidden, head.cls, grad_logits);
  dhidden += conv2d_backward(out.hidden, head.bbox, grad_deltas);
  relu_backward_inplace(out.hidden, dhidden);
  return conv2d_backward(fused_map, head.conv, dhidden);
}

namespace {

// (n, c, y, x) layout <-> (anchor, j) with anchor = ((n*H + y)*W + x)*k + c/width.
Tensor gather(const Tensor& t, int width) {
  const int n = t.dim(0), ch = t.dim(1), h = t.dim(2), w = t.dim(3);
  const int k = ch / width;
  Tensor out({n * h * w * k, width});
  std::size_t row = 0;
  for (int b = 0; b < n; ++b) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int a = 0; a < k; ++a, ++row) {
          for (int j = 0; j < width; ++j) out[row * width + j] = t.at(b, a * width + j, y, x);
        }
      }
    }
  }
  return out;
}

Tensor scatter(const Tensor& per_anchor, const Shape& layout, int width) {
  Tensor t(layout);
  const int n = layout[0], ch = layout[1], h = layout[2], w = layout[3];
  const int k = ch / width;
  if (per_anchor.size() != t.size()) throw std::invalid_argument("scatter_anchor: size mismatch with layout");
  std::size_t row = 0;
  for (int b = 0; b < n; ++b) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int a = 0; a < k; ++a, ++row) {
          for (int j = 0; j < width; ++j) t.at(b, a * width + j, y, x) = per_anchor[row * width + j];
        }
      }
    }
  }
  return t;
}

}  // namespace

Tensor gather_anchor_logits(const Tensor& logits) { return gather(logits, 2); }
Tensor gather_anchor_deltas(const Tensor& deltas) { return gather(deltas, 4); }
Tensor scatter_anchor_logits(const Tensor& per_anchor, const Shape& layout) { return scatter(per_anchor, layout, 2); }
Tensor scatter_anchor_deltas(const Tensor& per_anchor, const Shape& layout) { return scatter(per_anchor, layout, 4); }

std::vector<Proposal> propose(const Tensor& logits, const Tensor& deltas, std::span<const BBox> anchors,
                              double image_w, double image_h, const ProposalConfig& cfg) {
  const Tensor probs = softmax_rows(gather_anchor_logits(logits));
  const Tensor d = gather_anchor_deltas(deltas);
  if (probs.dim(0) != static_cast<int>(anchors.size()) || d.dim(0) != static_cast<int>(anchors.size())) {
    throw std::invalid_argument("propose: head outputs cover " + std::to_string(probs.dim(0)) + " anchors, got " +
                                std::to_string(anchors.size()) + " anchor boxes");
  }
  std::vector<BBox> boxes;
  std::vector<double> scores;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const Deltas di{d[4 * i], d[4 * i + 1], d[4 * i + 2], d[4 * i + 3]};
    auto clipped = clip_box(decode_deltas(di, anchors[i]), image_w, image_h);
    if (!clipped || clipped->width() < cfg.min_size || clipped->height() < cfg.min_size) continue;
    boxes.push_back(*clipped);
    scores.push_back(probs[2 * i + 1]);
  }
  std::vector<std::size_t> order = order_by_score(scores);
  if (order.size() > static_cast<std::size_t>(cfg.pre_nms_top_n)) order.resize(static_cast<std::size_t>(cfg.pre_nms_top_n));
  std::vector<BBox> top_boxes;
  std::vector<double> top_scores;
  for (std::size_t i : order) {
    top_boxes.push_back(boxes[i]);
    top_scores.push_back(scores[i]);
  }
  std::vector<std::size_t> keep = nms(top_boxes, top_scores, cfg.nms_threshold);
  if (keep.size() > static_cast<std::size_t>(cfg.post_nms_top_n)) keep.resize(static_cast<std::size_t>(cfg.post_nms_top_n));
  std::vector<Proposal> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back({top_boxes[i], top_scores[i]});
  return out;
}

int RpnTargets::count(int label) const {
  return static_cast<int>(std::count(labels.begin(), labels.end(), label));
}

void subsample_labels(std::vector<int>& labels, int label, int keep, Rng& rng) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) idx.push_back(i);
  }
  if (static_cast<int>(idx.size()) <= keep) return;
  rng.shuffle(idx);
  for (std::size_t i = static_cast<std::size_t>(std::max(keep, 0)); i < idx.size(); ++i) labels[idx[i]] = -1;
}

RpnTargets assign_rpn_targets(std::span<const BBox> anchors, std::span<const BBox> gt_boxes, double image_w,
                              double image_h, const RpnTargetConfig& cfg, Rng& rng) {
  const std::size_t a_count = anchors.size();
  RpnTargets t{std::vector<int>(a_count, -1), std::vector<Deltas>(a_count), std::vector<int>(a_count, -1)};
  std::vector<bool> inside(a_count);
  for (std::size_t i = 0; i < a_count; ++i) {
    const BBox& a = anchors[i];
    inside[i] = a.x1 >= 0.0 && a.y1 >= 0.0 && a.x2 <= image_w && a.y2 <= image_h;
  }
  std::vector<double> best_iou(a_count, 0.0);
  std::vector<double> gt_best(gt_boxes.size(), 0.0);
  std::vector<double> overlaps(a_count * gt_boxes.size(), 0.0);
  for (std::size_t i = 0; i < a_count; ++i) {
    if (!inside[i]) continue;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double v = iou(anchors[i], gt_boxes[g]);
      overlaps[i * gt_boxes.size() + g] = v;
      if (t.matched_gt[i] < 0 || v > best_iou[i]) {
        t.matched_gt[i] = static_cast<int>(g);
        best_iou[i] = v;
      }
      gt_best[g] = std::max(gt_best[g], v);
    }
  }
  for (std::size_t i = 0; i < a_count; ++i) {
    if (!inside[i]) continue;
    if (gt_boxes.empty() || best_iou[i] <= cfg.negative_iou) t.labels[i] = 0;
  }
  // every ground truth keeps its best anchor(s), whatever their IoU
  for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
    if (gt_best[g] <= 0.0) continue;
    for (std::size_t i = 0; i < a_count; ++i) {
      if (inside[i] && overlaps[i * gt_boxes.size() + g] == gt_best[g]) {
        t.labels[i] = 1;
        t.matched_gt[i] = static_cast<int>(g);
      }
    }
  }
  for (std::size_t i = 0; i < a_count; ++i) {
    if (inside[i] && !gt_boxes.empty() && best_iou[i] >= cfg.positive_iou) t.labels[i] = 1;
  }

  const int max_pos = static_cast<int>(cfg.positive_fraction * cfg.batch_size);
  subsample_labels(t.labels, 1, max_pos, rng);
  subsample_labels(t.labels, 0, cfg.batch_size - t.count(1), rng);
  if (t.count(1) == 0 && t.count(0) == 0) {
    throw std::runtime_error("assign_rpn_targets: no positive or negative anchors to sample");
  }
  for (std::size_t i = 0; i < a_count; ++i) {
    if (t.labels[i] == 1) t.target_deltas[i] = encode_deltas(gt_boxes[static_cast<std::size_t>(t.matched_gt[i])], anchors[i]);
  }
  return t;
}

}  // namespace msfr
