#include "msfr/loss.hpp"

#include <algorithm>
#include <stdexcept>

namespace msfr {

namespace {

struct ClsTerm {
  double loss = 0.0;
  Tensor grad;  // rows x 2, zero on unsampled rows
};

// Cross-entropy averaged over rows whose label is 0 or 1.
ClsTerm classification_term(const Tensor& logits, const std::vector<int>& labels, double scale) {
  const int rows = logits.dim(0);
  std::vector<int> picked;
  std::vector<int> picked_labels;
  for (int i = 0; i < rows; ++i) {
    if (labels[static_cast<std::size_t>(i)] >= 0) {
      picked.push_back(i);
      picked_labels.push_back(labels[static_cast<std::size_t>(i)]);
    }
  }
  ClsTerm t{0.0, Tensor(logits.shape())};
  if (picked.empty()) return t;
  Tensor sel({static_cast<int>(picked.size()), 2});
  for (std::size_t j = 0; j < picked.size(); ++j) {
    sel[2 * j] = logits[2 * static_cast<std::size_t>(picked[j])];
    sel[2 * j + 1] = logits[2 * static_cast<std::size_t>(picked[j]) + 1];
  }
  const SoftmaxXent fwd = softmax_cross_entropy(sel, picked_labels);
  const Tensor g = softmax_cross_entropy_backward(fwd, picked_labels, scale);
  for (std::size_t j = 0; j < picked.size(); ++j) {
    t.grad[2 * static_cast<std::size_t>(picked[j])] = g[2 * j];
    t.grad[2 * static_cast<std::size_t>(picked[j]) + 1] = g[2 * j + 1];
  }
  t.loss = fwd.loss;
  return t;
}

struct RegTerm {
  double loss = 0.0;
  Tensor grad;
};

RegTerm regression_term(const Tensor& deltas, const std::vector<int>& labels, const std::vector<Deltas>& targets,
                        double scale) {
  const int rows = deltas.dim(0);
  Tensor target(deltas.shape());
  Tensor mask(deltas.shape());
  int positives = 0;
  for (int i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    if (labels[r] != 1) continue;
    ++positives;
    const Deltas& d = targets[r];
    target[4 * r] = d.tx;
    target[4 * r + 1] = d.ty;
    target[4 * r + 2] = d.tw;
    target[4 * r + 3] = d.th;
    for (std::size_t j = 0; j < 4; ++j) mask[4 * r + j] = 1.0;
  }
  RegTerm t{0.0, Tensor(deltas.shape())};
  if (positives == 0) return t;
  t.loss = smooth_l1(deltas, target, mask) / positives;
  t.grad = smooth_l1_backward(deltas, target, mask, scale / positives);
  return t;
}

}  // namespace

MultitaskLoss multitask_loss(const Tensor& rpn_logits, const Tensor& rpn_deltas, const RpnTargets& rpn_targets,
                             const Tensor& det_logits, const Tensor& det_deltas, const DetTargets& det_targets,
                             double lambda) {
  const Tensor anchor_logits = gather_anchor_logits(rpn_logits);
  const Tensor anchor_deltas = gather_anchor_deltas(rpn_deltas);
  if (anchor_logits.dim(0) != static_cast<int>(rpn_targets.labels.size())) {
    throw std::invalid_argument("multitask_loss: " + std::to_string(rpn_targets.labels.size()) +
                                " anchor labels for " + std::to_string(anchor_logits.dim(0)) + " anchors");
  }
  if (det_logits.dim(0) != static_cast<int>(det_targets.labels.size())) {
    throw std::invalid_argument("multitask_loss: " + std::to_string(det_targets.labels.size()) +
                                " ROI labels for " + std::to_string(det_logits.dim(0)) + " ROIs");
  }

  const ClsTerm rpn_cls = classification_term(anchor_logits, rpn_targets.labels, 1.0);
  const RegTerm rpn_reg = regression_term(anchor_deltas, rpn_targets.labels, rpn_targets.target_deltas, lambda);
  const ClsTerm det_cls = classification_term(det_logits, det_targets.labels, 1.0);
  const RegTerm det_reg = regression_term(det_deltas, det_targets.labels, det_targets.target_deltas, lambda);

  MultitaskLoss out;
  out.parts.rpn_cls = rpn_cls.loss;
  out.parts.rpn_reg = rpn_reg.loss;
  out.parts.det_cls = det_cls.loss;
  out.parts.det_reg = det_reg.loss;
  out.parts.total = rpn_cls.loss + lambda * rpn_reg.loss + det_cls.loss + lambda * det_reg.loss;
  out.grad_rpn_logits = scatter_anchor_logits(rpn_cls.grad, rpn_logits.shape());
  out.grad_rpn_deltas = scatter_anchor_deltas(rpn_reg.grad, rpn_deltas.shape());
  out.grad_det_logits = det_cls.grad;
  out.grad_det_deltas = det_reg.grad;
  return out;
}

}  // namespace msfr
