#include "msfr/model.hpp"

#include <limits>
#include <stdexcept>

namespace msfr {

namespace {

std::size_t count_params(const ModelConfig& cfg) {
  Model m(cfg, 0);
  std::size_t n = 0;
  for (const Param* p : m.params()) n += p->value.size();
  return n;
}

}  // namespace

ModelConfig ModelConfig::tap5_only() const {
  ModelConfig c = *this;
  c.fusion.taps = {2};
  // widen the detection head until the parameter count is closest to the fused model's
  const std::size_t target = count_params(*this);
  std::size_t best_diff = std::numeric_limits<std::size_t>::max();
  for (int h = head_hidden;; ++h) {
    c.head_hidden = h;
    const std::size_t n = count_params(c);
    const std::size_t diff = n > target ? n - target : target - n;
    if (diff >= best_diff) {
      c.head_hidden = h - 1;
      break;
    }
    best_diff = diff;
    if (n >= target) break;
  }
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.backbone.stage_channels = {2, 2, 3, 3, 4};
  c.backbone.convs_per_stage = 1;
  c.fusion.shrink_channels = 4;
  c.fusion.roi_pool_size = 3;
  c.anchors.scales = {1.0, 2.0};
  c.anchors.ratios = {1.0};
  c.rpn_hidden = 4;
  c.head_hidden = 6;
  c.det_targets.batch_size = 3;
  c.det_targets.foreground_fraction = 0.34;
  return c;
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  const auto& bb = cfg_.backbone;
  const int stages = static_cast<int>(bb.stage_channels.size());
  if (stages < 3) throw std::invalid_argument("backbone needs at least three stages");
  if (cfg_.anchors.base_stride != (1 << (stages - 1))) {
    throw std::invalid_argument("anchor base stride " + std::to_string(cfg_.anchors.base_stride) +
                                " must equal the tap5 stride " + std::to_string(1 << (stages - 1)));
  }
  int in = bb.in_channels;
  for (int s = 0; s < stages; ++s) {
    for (int j = 0; j < bb.convs_per_stage; ++j) {
      const std::string name = "backbone.conv" + std::to_string(s + 1) + "_" + std::to_string(j + 1);
      backbone.emplace_back(name, in, bb.stage_channels[s], 3, 1, 1);
      in = bb.stage_channels[s];
    }
  }
  tap_channels_.assign(bb.stage_channels.end() - 3, bb.stage_channels.end());
  if (cfg_.fusion.shrink_channels != tap_channels_.back()) {
    throw std::invalid_argument("fusion shrink channels must equal the tap5 channel count");
  }

  int fused_in = 0;
  for (int t : cfg_.fusion.taps) {
    if (t < 0 || t > 2) throw std::invalid_argument("fusion tap index out of range: " + std::to_string(t));
    const int c = tap_channels_[static_cast<std::size_t>(t)];
    rpn_norms.emplace_back("rpn.norm.tap" + std::to_string(t + 3), c, cfg_.fusion.gamma_init, cfg_.fusion.epsilon);
    fused_in += c;
  }
  rpn_shrink = ConvLayerParams("rpn.shrink", fused_in, cfg_.fusion.shrink_channels, 1, 1, 0);
  rpn_head = RpnHeadParams(cfg_.fusion.shrink_channels, cfg_.rpn_hidden, cfg_.anchors.per_cell());
  det_head = DetectionHeadParams(tap_channels_, cfg_.fusion, cfg_.head_hidden);

  Rng rng(seed);
  for (auto& c : backbone) init_conv(c, rng);
  init_conv(rpn_shrink, rng);
  init_conv(rpn_head.conv, rng);
  init_conv(rpn_head.cls, rng);
  init_conv(rpn_head.bbox, rng);
  init_conv(det_head.shrink, rng);
  for (auto* fc : {&det_head.fc1, &det_head.fc2, &det_head.cls, &det_head.bbox}) init_fc(*fc, rng);
}

std::vector<Param*> Model::params() {
  std::vector<Param*> p;
  for (auto& c : backbone) {
    p.push_back(&c.weight);
    p.push_back(&c.bias);
  }
  for (auto& n : rpn_norms) p.push_back(&n.gamma);
  p.push_back(&rpn_shrink.weight);
  p.push_back(&rpn_shrink.bias);
  for (Param* q : rpn_head.params()) p.push_back(q);
  for (Param* q : det_head.params()) p.push_back(q);
  return p;
}

void Model::zero_grad() {
  for (Param* p : params()) p->zero_grad();
}

FeatureTapSet Model::backbone_forward(const Tensor& image, BackboneCache* cache) const {
  const int stages = static_cast<int>(cfg_.backbone.stage_channels.size());
  const int per = cfg_.backbone.convs_per_stage;
  FeatureTapSet taps;
  Tensor x = image;
  for (int s = 0; s < stages; ++s) {
    for (int j = 0; j < per; ++j) {
      Tensor y = relu(conv2d(x, backbone[static_cast<std::size_t>(s * per + j)]));
      if (cache) {
        cache->conv_inputs.push_back(std::move(x));
        cache->relu_outputs.push_back(y);
      }
      x = std::move(y);
    }
    if (s >= stages - 3) {
      const int t = s - (stages - 3);
      taps.push_back({"tap" + std::to_string(t + 3), x, 1 << s});
    }
    if (s < stages - 1) {
      PoolResult pooled = maxpool2d(x, 2, 2);
      x = pooled.output;
      if (cache) cache->pools.push_back(std::move(pooled));
    }
  }
  return taps;
}

void Model::backbone_backward(const BackboneCache& cache, std::vector<Tensor>& tap_grads) {
  const int stages = static_cast<int>(cfg_.backbone.stage_channels.size());
  const int per = cfg_.backbone.convs_per_stage;
  auto tap_grad = [&](int t) -> const Tensor* {
    const auto i = static_cast<std::size_t>(t);
    return i < tap_grads.size() && !tap_grads[i].empty() ? &tap_grads[i] : nullptr;
  };
  Tensor g;
  for (int s = stages - 1; s >= 0; --s) {
    const Tensor& stage_out = cache.relu_outputs[static_cast<std::size_t>(s * per + per - 1)];
    if (s < stages - 1) {
      g = maxpool2d_backward(stage_out.shape(), cache.pools[static_cast<std::size_t>(s)].argmax, g);
    } else {
      g = Tensor(stage_out.shape());
    }
    if (s >= stages - 3) {
      if (const Tensor* tg = tap_grad(s - (stages - 3))) g += *tg;
    }
    for (int j = per - 1; j >= 0; --j) {
      const auto idx = static_cast<std::size_t>(s * per + j);
      relu_backward_inplace(cache.relu_outputs[idx], g);
      g = conv2d_backward(cache.conv_inputs[idx], backbone[idx], g);
    }
  }
}

SharedForward Model::forward_shared(const Tensor& image) const {
  SharedForward f;
  f.taps = backbone_forward(image, &f.backbone);
  f.rpn.fused = fuse_feature_maps(f.taps, rpn_norms, rpn_shrink, cfg_.fusion, cfg_.anchors.base_stride, &f.rpn.fusion);
  f.rpn.head = rpn_forward(f.rpn.fused, rpn_head);
  f.rpn.anchors = generate_anchors(f.rpn.fused.dim(2), f.rpn.fused.dim(3), cfg_.anchors);
  return f;
}

std::vector<Proposal> Model::proposals(const SharedForward& fwd, double image_w, double image_h,
                                       const ProposalConfig& cfg) const {
  return propose(fwd.rpn.head.logits, fwd.rpn.head.deltas, fwd.rpn.anchors, image_w, image_h, cfg);
}

StepTargets Model::sample_targets(const SharedForward& fwd, const Scene& scene, Rng& rng) const {
  StepTargets t;
  t.rpn = assign_rpn_targets(fwd.rpn.anchors, scene.gt_boxes, scene.width, scene.height, cfg_.rpn_targets, rng);
  std::vector<BBox> boxes;
  for (const Proposal& p : proposals(fwd, scene.width, scene.height, cfg_.train_proposals)) boxes.push_back(p.box);
  t.det = assign_detection_targets(boxes, scene.gt_boxes, cfg_.det_targets, rng);
  return t;
}

LossComponents Model::loss(const SharedForward& fwd, const StepTargets& targets, double lambda, bool backward,
                           LossBranches branches) {
  const DetectionOutput det = detection_forward(fwd.taps, targets.det.rois, det_head, cfg_.fusion);
  const MultitaskLoss ml = multitask_loss(fwd.rpn.head.logits, fwd.rpn.head.deltas, targets.rpn, det.logits,
                                          det.deltas, targets.det, lambda);
  if (!backward) return ml.parts;

  std::vector<Tensor> tap_grads(fwd.taps.size());
  for (std::size_t i = 0; i < fwd.taps.size(); ++i) tap_grads[i] = Tensor(fwd.taps[i].map.shape());
  if (branches.rpn) {
    const Tensor dfused = rpn_backward(fwd.rpn.fused, rpn_head, fwd.rpn.head, ml.grad_rpn_logits, ml.grad_rpn_deltas);
    fuse_feature_maps_backward(fwd.taps, fwd.rpn.fusion, rpn_norms, rpn_shrink, dfused, tap_grads);
  }
  if (branches.det) {
    detection_backward(fwd.taps, det, det_head, ml.grad_det_logits, ml.grad_det_deltas, tap_grads);
  }
  backbone_backward(fwd.backbone, tap_grads);
  return ml.parts;
}

std::vector<Detection> Model::detect(const Tensor& image, double image_w, double image_h, double score_threshold,
                                     double nms_threshold) const {
  const SharedForward fwd = forward_shared(image);
  std::vector<BBox> rois;
  for (const Proposal& p : proposals(fwd, image_w, image_h, cfg_.test_proposals)) rois.push_back(p.box);
  const DetectionOutput det = detection_forward(fwd.taps, rois, det_head, cfg_.fusion);
  return postprocess_detections(det.logits, det.deltas, rois, score_threshold, nms_threshold, image_w, image_h);
}

}  // namespace msfr
