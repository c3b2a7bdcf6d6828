#pragma once

#include "msfr/detection.hpp"
#include "msfr/rpn.hpp"
#include "msfr/tensor.hpp"

namespace msfr {

struct LossComponents {
  double total = 0.0;
  double rpn_cls = 0.0;
  double rpn_reg = 0.0;
  double det_cls = 0.0;
  double det_reg = 0.0;
};

struct MultitaskLoss {
  LossComponents parts;
  Tensor grad_rpn_logits;  // same layout as the RPN head outputs
  Tensor grad_rpn_deltas;
  Tensor grad_det_logits;  // R x 2
  Tensor grad_det_deltas;  // R x 4
};

/// total = rpn_cls + lambda * rpn_reg + det_cls + lambda * det_reg.
/// Classification terms average cross-entropy over sampled entries; regression
/// terms sum smooth-L1 over positives and divide by the positive count (zero
/// when there are no positives).
MultitaskLoss multitask_loss(const Tensor& rpn_logits, const Tensor& rpn_deltas, const RpnTargets& rpn_targets,
                             const Tensor& det_logits, const Tensor& det_deltas, const DetTargets& det_targets,
                             double lambda);

}  // namespace msfr
