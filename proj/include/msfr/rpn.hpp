#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "msfr/box.hpp"
#include "msfr/layers.hpp"
#include "msfr/rng.hpp"
#include "msfr/tensor.hpp"

namespace msfr {

struct AnchorConfig {
  int base_stride = 16;
  std::vector<double> scales{0.5, 1.0, 2.0, 4.0};
  std::vector<double> ratios{1.0, 1.3};  // h / w

  int per_cell() const { return static_cast<int>(scales.size() * ratios.size()); }
};

/// Row-major over cells, then ratios, then scales. Anchors are centered on
/// ((x + 0.5) * stride, (y + 0.5) * stride) and may cross the image border.
std::vector<BBox> generate_anchors(int feat_h, int feat_w, const AnchorConfig& cfg);

struct Proposal {
  BBox box;
  double objectness = 0.0;
};

struct RpnHeadParams {
  ConvLayerParams conv;  // 3x3, padding 1
  ConvLayerParams cls;   // 1x1 -> 2k (background, face) per anchor
  ConvLayerParams bbox;  // 1x1 -> 4k

  RpnHeadParams() = default;
  RpnHeadParams(int in_channels, int hidden, int anchors_per_cell);
  std::vector<Param*> params();
};

struct RpnOutput {
  Tensor hidden;  // post-ReLU
  Tensor logits;  // N x 2k x H x W
  Tensor deltas;  // N x 4k x H x W
};

RpnOutput rpn_forward(const Tensor& fused_map, const RpnHeadParams& head);
/// Accumulates head gradients and returns the gradient w.r.t. the fused map.
Tensor rpn_backward(const Tensor& fused_map, RpnHeadParams& head, const RpnOutput& out, const Tensor& grad_logits,
                    const Tensor& grad_deltas);

/// Per-anchor views of the head outputs (anchor order as generate_anchors).
Tensor gather_anchor_logits(const Tensor& logits);  // A x 2
Tensor gather_anchor_deltas(const Tensor& deltas);  // A x 4
Tensor scatter_anchor_logits(const Tensor& per_anchor, const Shape& layout);
Tensor scatter_anchor_deltas(const Tensor& per_anchor, const Shape& layout);

struct ProposalConfig {
  int pre_nms_top_n = 2000;
  int post_nms_top_n = 300;
  double nms_threshold = 0.7;
  double min_size = 4.0;
};

/// Softmax objectness, decode, clip, size filter, top-n, NMS, top-n.
/// Ordering ties fall back to anchor index.
std::vector<Proposal> propose(const Tensor& logits, const Tensor& deltas, std::span<const BBox> anchors,
                              double image_w, double image_h, const ProposalConfig& cfg);

struct RpnTargetConfig {
  double positive_iou = 0.7;
  double negative_iou = 0.3;
  int batch_size = 256;
  double positive_fraction = 0.5;
};

struct RpnTargets {
  std::vector<int> labels;             // per anchor: 1 face, 0 background, -1 ignore
  std::vector<Deltas> target_deltas;   // per anchor, meaningful where label == 1
  std::vector<int> matched_gt;         // per anchor best-IoU ground truth, -1 if none

  int count(int label) const;
};

/// Anchors crossing the image border are ignored. Throws when the image has
/// neither positives nor negatives to sample.
RpnTargets assign_rpn_targets(std::span<const BBox> anchors, std::span<const BBox> gt_boxes, double image_w,
                              double image_h, const RpnTargetConfig& cfg, Rng& rng);

/// Randomly demotes entries of `labels` equal to `label` (to -1) until at most
/// `keep` remain.
void subsample_labels(std::vector<int>& labels, int label, int keep, Rng& rng);

}  // namespace msfr
