#pragma once

#include <span>
#include <vector>

#include "msfr/box.hpp"
#include "msfr/fusion.hpp"
#include "msfr/layers.hpp"
#include "msfr/rng.hpp"
#include "msfr/rpn.hpp"

namespace msfr {

/// Final face detection; class is implicit (single class).
struct Detection {
  BBox box;
  double score = 0.0;
};

struct DetectionHeadParams {
  std::vector<L2NormScaleLayer> norms;  // one per fused tap, in tap order
  ConvLayerParams shrink;               // 1x1, sum(C) -> shrink_channels
  FcLayerParams fc1;
  FcLayerParams fc2;
  FcLayerParams cls;   // -> 2 (background, face)
  FcLayerParams bbox;  // -> 4

  DetectionHeadParams() = default;
  /// tap_channels: channel count of every tap in the tap set.
  DetectionHeadParams(std::span<const int> tap_channels, const FusionConfig& fusion, int hidden);
  std::vector<Param*> params();
};

struct DetectionOutput {
  MsRoiPoolCache pool_cache;
  Tensor pooled;   // R x S x P x P
  Tensor hidden1;  // R x hidden, post-ReLU
  Tensor hidden2;
  Tensor logits;   // R x 2
  Tensor deltas;   // R x 4
};

/// Evaluates the head for every ROI; an empty ROI list gives empty outputs.
DetectionOutput detection_forward(const FeatureTapSet& taps, std::span<const BBox> rois,
                                  const DetectionHeadParams& head, const FusionConfig& fusion);

/// Accumulates head gradients and adds tap gradients into tap_grads.
void detection_backward(const FeatureTapSet& taps, const DetectionOutput& out, DetectionHeadParams& head,
                        const Tensor& grad_logits, const Tensor& grad_deltas, std::vector<Tensor>& tap_grads);

struct DetTargetConfig {
  double foreground_iou = 0.5;
  double background_iou_hi = 0.5;
  double background_iou_lo = 0.1;
  int batch_size = 128;
  double foreground_fraction = 0.25;
};

struct DetTargets {
  std::vector<BBox> rois;
  std::vector<int> labels;  // 1 face, 0 background
  std::vector<Deltas> target_deltas;

  int positives() const;
};

/// Candidates are the proposals plus the ground-truth boxes themselves.
/// When no background candidate exists the background quota is filled from
/// the discarded (IoU < lo) pool.
DetTargets assign_detection_targets(std::span<const BBox> proposals, std::span<const BBox> gt_boxes,
                                    const DetTargetConfig& cfg, Rng& rng);

/// Softmax, decode on proposal boxes, clip, keep score > threshold, NMS.
/// Sorted by descending score.
std::vector<Detection> postprocess_detections(const Tensor& logits, const Tensor& deltas,
                                              std::span<const BBox> proposals, double score_threshold,
                                              double nms_threshold, double image_w, double image_h);

}  // namespace msfr
