#include "msfr/detection.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace msfr {

DetectionHeadParams::DetectionHeadParams(std::span<const int> tap_channels, const FusionConfig& fusion, int hidden) {
  int total = 0;
  for (int t : fusion.taps) {
    const int c = tap_channels[static_cast<std::size_t>(t)];
    norms.emplace_back("det.norm.tap" + std::to_string(t + 3), c, fusion.gamma_init, fusion.epsilon);
    total += c;
  }
  shrink = ConvLayerParams("det.shrink", total, fusion.shrink_channels, 1, 1, 0);
  const int flat = fusion.shrink_channels * fusion.roi_pool_size * fusion.roi_pool_size;
  fc1 = FcLayerParams("det.fc1", flat, hidden);
  fc2 = FcLayerParams("det.fc2", hidden, hidden);
  cls = FcLayerParams("det.cls", hidden, 2);
  bbox = FcLayerParams("det.bbox", hidden, 4);
}

std::vector<Param*> DetectionHeadParams::params() {
  std::vector<Param*> p;
  for (auto& n : norms) p.push_back(&n.gamma);
  p.push_back(&shrink.weight);
  p.push_back(&shrink.bias);
  for (auto* layer : {&fc1, &fc2, &cls, &bbox}) {
    p.push_back(&layer->weight);
    p.push_back(&layer->bias);
  }
  return p;
}

DetectionOutput detection_forward(const FeatureTapSet& taps, std::span<const BBox> rois,
                                  const DetectionHeadParams& head, const FusionConfig& fusion) {
  DetectionOutput out;
  out.pooled = ms_roi_pool(taps, rois, head.norms, head.shrink, fusion, &out.pool_cache);
  const int r = static_cast<int>(rois.size());
  const Tensor flat = out.pooled.reshaped({r, head.fc1.in_features()});
  out.hidden1 = relu(fully_connected(flat, head.fc1));
  out.hidden2 = relu(fully_connected(out.hidden1, head.fc2));
  out.logits = fully_connected(out.hidden2, head.cls);
  out.deltas = fully_connected(out.hidden2, head.bbox);
  return out;
}

void detection_backward(const FeatureTapSet& taps, const DetectionOutput& out, DetectionHeadParams& head,
                        const Tensor& grad_logits, const Tensor& grad_deltas, std::vector<Tensor>& tap_grads) {
  const int r = out.logits.dim(0);
  if (r == 0) return;
  Tensor dh2 = fully_connected_backward(out.hidden2, head.cls, grad_logits);
  dh2 += fully_connected_backward(out.hidden2, head.bbox, grad_deltas);
  relu_backward_inplace(out.hidden2, dh2);
  Tensor dh1 = fully_connected_backward(out.hidden1, head.fc2, dh2);
  relu_backward_inplace(out.hidden1, dh1);
  const Tensor flat = out.pooled.reshaped({r, static_cast<int>(out.pooled.size() / r)});
  const Tensor dflat = fully_connected_backward(flat, head.fc1, dh1);
  ms_roi_pool_backward(taps, out.pool_cache, head.norms, head.shrink, dflat.reshaped(out.pooled.shape()), tap_grads);
}

int DetTargets::positives() const { return static_cast<int>(std::count(labels.begin(), labels.end(), 1)); }

DetTargets assign_detection_targets(std::span<const BBox> proposals, std::span<const BBox> gt_boxes,
                                    const DetTargetConfig& cfg, Rng& rng) {
  std::vector<BBox> candidates(proposals.begin(), proposals.end());
  candidates.insert(candidates.end(), gt_boxes.begin(), gt_boxes.end());

  std::vector<std::size_t> fg, bg, discarded;
  std::vector<int> best_gt(candidates.size(), -1);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double best = 0.0;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double v = iou(candidates[i], gt_boxes[g]);
      if (best_gt[i] < 0 || v > best) {
        best = v;
        best_gt[i] = static_cast<int>(g);
      }
    }
    if (!gt_boxes.empty() && best >= cfg.foreground_iou) {
      fg.push_back(i);
    } else if (best >= cfg.background_iou_lo && best < cfg.background_iou_hi) {
      bg.push_back(i);
    } else {
      discarded.push_back(i);
    }
  }
  if (bg.empty()) bg = discarded;

  const int fg_quota = static_cast<int>(cfg.foreground_fraction * cfg.batch_size);
  rng.shuffle(fg);
  if (static_cast<int>(fg.size()) > fg_quota) fg.resize(static_cast<std::size_t>(fg_quota));
  const int bg_quota = cfg.batch_size - static_cast<int>(fg.size());
  rng.shuffle(bg);
  if (static_cast<int>(bg.size()) > bg_quota) bg.resize(static_cast<std::size_t>(std::max(bg_quota, 0)));

  // keep candidate order so the sample is independent of shuffle layout
  std::sort(fg.begin(), fg.end());
  std::sort(bg.begin(), bg.end());
  DetTargets t;
  for (std::size_t i : fg) {
    t.rois.push_back(candidates[i]);
    t.labels.push_back(1);
    t.target_deltas.push_back(encode_deltas(gt_boxes[static_cast<std::size_t>(best_gt[i])], candidates[i]));
  }
  for (std::size_t i : bg) {
    t.rois.push_back(candidates[i]);
    t.labels.push_back(0);
    t.target_deltas.push_back({});
  }
  return t;
}

std::vector<Detection> postprocess_detections(const Tensor& logits, const Tensor& deltas,
                                              std::span<const BBox> proposals, double score_threshold,
                                              double nms_threshold, double image_w, double image_h) {
  const int r = static_cast<int>(proposals.size());
  if (logits.size() != static_cast<std::size_t>(2 * r) || deltas.size() != static_cast<std::size_t>(4 * r)) {
    throw std::invalid_argument("postprocess_detections: outputs do not match " + std::to_string(r) + " proposals");
  }
  if (r == 0) return {};
  const Tensor probs = softmax_rows(logits.reshaped({r, 2}));
  std::vector<BBox> boxes;
  std::vector<double> scores;
  for (int i = 0; i < r; ++i) {
    const double score = probs[2 * static_cast<std::size_t>(i) + 1];
    if (!(score > score_threshold)) continue;
    const std::size_t o = 4 * static_cast<std::size_t>(i);
    auto clipped = clip_box(decode_deltas({deltas[o], deltas[o + 1], deltas[o + 2], deltas[o + 3]}, proposals[i]),
                            image_w, image_h);
    if (!clipped) continue;
    boxes.push_back(*clipped);
    scores.push_back(score);
  }
  std::vector<Detection> out;
  for (std::size_t i : nms(boxes, scores, nms_threshold)) out.push_back({boxes[i], scores[i]});
  return out;
}

}  // namespace msfr
