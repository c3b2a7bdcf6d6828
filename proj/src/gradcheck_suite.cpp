#include "msfr/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iterator>
#include <stdexcept>

#include "msfr/detection.hpp"
#include "msfr/fusion.hpp"
#include "msfr/gradcheck.hpp"
#include "msfr/layers.hpp"
#include "msfr/loss.hpp"
#include "msfr/model.hpp"
#include "msfr/rng.hpp"
#include "msfr/rpn.hpp"

namespace msfr {

namespace {

struct Tally {
  double max_err = 0.0;
  int checked = 0;
  int kinks = 0;       // setups abandoned because a stencil crossed a kink
  int unresolved = 0;  // seeds left without a kink-free setup
  double h = 1e-5;

  void probe(const std::function<double()>& loss, std::span<double> point, std::span<const double> analytic) {
    if (point.empty()) return;
    const GradCheckResult r = finite_difference_check(loss, point, analytic, h);
    max_err = std::max(max_err, r.max_rel_error);
    checked += static_cast<int>(point.size());
  }
  void probe(const std::function<double()>& loss, Tensor& point, const Tensor& analytic) {
    require_same_shape(point, analytic, "gradcheck probe");
    probe(loss, point.data(), analytic.data());
  }
};

Tensor uniform_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values spaced far apart relative to h, so max selections never flip.
Tensor distinct_tensor(const Shape& s, Rng& rng) {
  Tensor t(s);
  std::vector<std::size_t> rank(t.size());
  for (std::size_t i = 0; i < rank.size(); ++i) rank[i] = i;
  rng.shuffle(rank);
  const double step = 2.0 / static_cast<double>(t.size() + 1);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = -1.0 + step * (static_cast<double>(rank[i]) + 1.0 + rng.uniform(-0.25, 0.25));
  }
  return t;
}

// |x| in [0.1, 1], random sign.
Tensor off_zero_tensor(const Shape& s, Rng& rng) {
  Tensor t(s);
  for (double& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "gradcheck weighted sum");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void randomize(ConvLayerParams& p, Rng& rng) {
  init_conv(p, rng);
  for (double& v : p.bias.value.data()) v = rng.uniform(-0.2, 0.2);
}

void randomize(FcLayerParams& p, Rng& rng) {
  init_fc(p, rng);
  for (double& v : p.bias.value.data()) v = rng.uniform(-0.2, 0.2);
}

void randomize(L2NormScaleLayer& n, Rng& rng) {
  for (double& v : n.gamma.value.data()) v = rng.uniform(0.5, 2.0);
}

BBox random_roi(Rng& rng, double image, double min_side, double max_side) {
  const double w = rng.uniform(min_side, max_side), h = rng.uniform(min_side, max_side);
  const double x = rng.uniform(0.0, image - w), y = rng.uniform(0.0, image - h);
  return {x, y, x + w, y + h};
}

FeatureTapSet random_taps(Rng& rng, int image, std::span<const int> channels) {
  FeatureTapSet taps;
  for (std::size_t t = 0; t < channels.size(); ++t) {
    const int stride = 4 << t;
    taps.push_back({"tap" + std::to_string(t + 3), distinct_tensor({1, channels[t], image / stride, image / stride}, rng),
                    stride});
  }
  return taps;
}

// ---- per-operation checks (one seed each) ----------------------------------

void check_conv2d(Rng& rng, Tally& t) {
  const int kernel = rng.uniform() < 0.5 ? 1 : 3;
  const int stride = rng.range(1, 2);
  const int pad = kernel == 3 ? rng.range(0, 1) : 0;
  Tensor x = uniform_tensor({rng.range(1, 2), 3, 6, 7}, rng);
  Tensor w = uniform_tensor({4, 3, kernel, kernel}, rng);
  Tensor b = uniform_tensor({4}, rng);
  const Tensor r = uniform_tensor(conv2d(x, w, b, stride, pad).shape(), rng);
  const ConvGrads g = conv2d_backward(x, w, stride, pad, r);
  auto loss = [&] { return dot(conv2d(x, w, b, stride, pad), r); };
  t.probe(loss, x, g.input);
  t.probe(loss, w, g.weight);
  t.probe(loss, b, g.bias);
}

void check_maxpool2d(Rng& rng, Tally& t) {
  const int window = rng.range(2, 3);
  Tensor x = distinct_tensor({1, 3, 7, 8}, rng);
  const PoolResult fwd = maxpool2d(x, window, 2);
  const Tensor r = uniform_tensor(fwd.output.shape(), rng);
  const Tensor g = maxpool2d_backward(x.shape(), fwd.argmax, r);
  t.probe([&] { return dot(maxpool2d(x, window, 2).output, r); }, x, g);
}

void check_relu(Rng& rng, Tally& t) {
  Tensor x = off_zero_tensor({2, 3, 4, 5}, rng);
  const Tensor r = uniform_tensor(x.shape(), rng);
  t.probe([&] { return dot(relu(x), r); }, x, relu_backward(x, r));
}

void check_fully_connected(Rng& rng, Tally& t) {
  Tensor x = uniform_tensor({3, 5}, rng);
  Tensor w = uniform_tensor({5, 4}, rng);
  Tensor b = uniform_tensor({4}, rng);
  const Tensor r = uniform_tensor({3, 4}, rng);
  const FcGrads g = fully_connected_backward(x, w, r);
  auto loss = [&] { return dot(fully_connected(x, w, b), r); };
  t.probe(loss, x, g.input);
  t.probe(loss, w, g.weight);
  t.probe(loss, b, g.bias);
}

void check_softmax_cross_entropy(Rng& rng, Tally& t) {
  const int n = 6, k = rng.range(2, 4);
  Tensor logits = uniform_tensor({n, k}, rng, -3.0, 3.0);
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) labels.push_back(rng.range(0, k - 1));
  const Tensor g = softmax_cross_entropy_backward(softmax_cross_entropy(logits, labels), labels);
  t.probe([&] { return softmax_cross_entropy(logits, labels).loss; }, logits, g);
}

void check_smooth_l1(Rng& rng, Tally& t) {
  Tensor pred({5, 4}), target({5, 4}), mask({5, 4});
  for (std::size_t i = 0; i < pred.size(); ++i) {
    target[i] = rng.uniform(-1.0, 1.0);
    // |d| in [0.05, 0.9] or [1.1, 2.5]
    const double mag = rng.uniform() < 0.5 ? rng.uniform(0.05, 0.9) : rng.uniform(1.1, 2.5);
    pred[i] = target[i] + (rng.uniform() < 0.5 ? -mag : mag);
    mask[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
  }
  const Tensor g = smooth_l1_backward(pred, target, mask);
  t.probe([&] { return smooth_l1(pred, target, mask); }, pred, g);
}

void check_l2norm_scale(Rng& rng, Tally& t) {
  Tensor x = uniform_tensor({1, 5, 3, 4}, rng);
  Tensor gamma = uniform_tensor({5}, rng, 0.5, 2.0);
  const Tensor r = uniform_tensor(x.shape(), rng);
  const L2NormGrads g = l2norm_scale_backward(x, gamma, 1e-10, r);
  auto loss = [&] { return dot(l2norm_scale(x, gamma, 1e-10), r); };
  t.probe(loss, x, g.input);
  t.probe(loss, gamma, g.gamma);
}

void check_concat_shrink(Rng& rng, Tally& t) {
  std::vector<Tensor> maps{uniform_tensor({1, 2, 3, 4}, rng), uniform_tensor({1, 3, 3, 4}, rng),
                           uniform_tensor({1, 1, 3, 4}, rng)};
  ConvLayerParams shrink("shrink", 6, 3, 1, 1, 0);
  randomize(shrink, rng);
  const Tensor r = uniform_tensor({1, 3, 3, 4}, rng);
  const std::vector<Tensor> g = concat_shrink_backward(maps, shrink, r);
  auto loss = [&] { return dot(concat_shrink(maps, shrink), r); };
  for (std::size_t i = 0; i < maps.size(); ++i) t.probe(loss, maps[i], g[i]);
  t.probe(loss, shrink.weight.value, shrink.weight.grad);
  t.probe(loss, shrink.bias.value, shrink.bias.grad);
}

void check_roi_pool(Rng& rng, Tally& t) {
  const int stride = 4 << rng.range(0, 2);
  const int extent = 64 / stride;
  Tensor map = distinct_tensor({1, 3, extent, extent}, rng);
  const int pool = rng.range(2, 4);
  const BBox roi = random_roi(rng, 64.0, 4.0, 60.0);
  const RoiPoolResult fwd = roi_pool(map, roi, stride, pool);
  const Tensor r = uniform_tensor(fwd.output.shape(), rng);
  Tensor g = Tensor::zeros_like(map);
  roi_pool_backward(fwd.argmax, r, g);
  t.probe([&] { return dot(roi_pool(map, roi, stride, pool).output, r); }, map, g);
}

void check_ms_roi_pool(Rng& rng, Tally& t) {
  const std::vector<int> channels{2, 3, 3};
  FeatureTapSet taps = random_taps(rng, 64, channels);
  FusionConfig cfg;
  cfg.roi_pool_size = 3;
  cfg.shrink_channels = 3;
  std::vector<L2NormScaleLayer> norms;
  for (int i = 0; i < 3; ++i) {
    norms.emplace_back("n" + std::to_string(i), channels[static_cast<std::size_t>(i)], 1.0);
    randomize(norms.back(), rng);
  }
  ConvLayerParams shrink("shrink", 8, 3, 1, 1, 0);
  randomize(shrink, rng);
  std::vector<BBox> rois{random_roi(rng, 64.0, 4.0, 15.0), random_roi(rng, 64.0, 10.0, 60.0),
                         random_roi(rng, 64.0, 4.0, 40.0)};
  MsRoiPoolCache cache;
  const Tensor out = ms_roi_pool(taps, rois, norms, shrink, cfg, &cache);
  const Tensor r = uniform_tensor(out.shape(), rng);
  std::vector<Tensor> tap_grads;
  for (const FeatureTap& tap : taps) tap_grads.push_back(Tensor::zeros_like(tap.map));
  ms_roi_pool_backward(taps, cache, norms, shrink, r, tap_grads);
  auto loss = [&] { return dot(ms_roi_pool(taps, rois, norms, shrink, cfg), r); };
  for (std::size_t i = 0; i < taps.size(); ++i) t.probe(loss, taps[i].map, tap_grads[i]);
  for (auto& n : norms) t.probe(loss, n.gamma.value, n.gamma.grad);
  t.probe(loss, shrink.weight.value, shrink.weight.grad);
  t.probe(loss, shrink.bias.value, shrink.bias.grad);
}

void check_fuse_feature_maps(Rng& rng, Tally& t) {
  const std::vector<int> channels{2, 3, 3};
  FeatureTapSet taps = random_taps(rng, 64, channels);
  FusionConfig cfg;
  cfg.shrink_channels = 3;
  std::vector<L2NormScaleLayer> norms;
  for (int i = 0; i < 3; ++i) {
    norms.emplace_back("n" + std::to_string(i), channels[static_cast<std::size_t>(i)], 1.0);
    randomize(norms.back(), rng);
  }
  ConvLayerParams shrink("shrink", 8, 3, 1, 1, 0);
  randomize(shrink, rng);
  FusedMapCache cache;
  const Tensor out = fuse_feature_maps(taps, norms, shrink, cfg, 16, &cache);
  const Tensor r = uniform_tensor(out.shape(), rng);
  std::vector<Tensor> tap_grads;
  for (const FeatureTap& tap : taps) tap_grads.push_back(Tensor::zeros_like(tap.map));
  fuse_feature_maps_backward(taps, cache, norms, shrink, r, tap_grads);
  auto loss = [&] { return dot(fuse_feature_maps(taps, norms, shrink, cfg, 16), r); };
  for (std::size_t i = 0; i < taps.size(); ++i) t.probe(loss, taps[i].map, tap_grads[i]);
  for (auto& n : norms) t.probe(loss, n.gamma.value, n.gamma.grad);
  t.probe(loss, shrink.weight.value, shrink.weight.grad);
  t.probe(loss, shrink.bias.value, shrink.bias.grad);
}

void check_rpn_head(Rng& rng, Tally& t) {
  Tensor fused = uniform_tensor({1, 3, 4, 5}, rng);
  RpnHeadParams head(3, 4, 2);
  randomize(head.conv, rng);
  randomize(head.cls, rng);
  randomize(head.bbox, rng);
  const RpnOutput out = rpn_forward(fused, head);
  const Tensor r1 = uniform_tensor(out.logits.shape(), rng);
  const Tensor r2 = uniform_tensor(out.deltas.shape(), rng);
  const Tensor g = rpn_backward(fused, head, out, r1, r2);
  auto loss = [&] {
    const RpnOutput o = rpn_forward(fused, head);
    return dot(o.logits, r1) + dot(o.deltas, r2);
  };
  t.probe(loss, fused, g);
  for (Param* p : head.params()) t.probe(loss, p->value, p->grad);
}

void check_detection_head(Rng& rng, Tally& t) {
  const std::vector<int> channels{2, 3, 3};
  FeatureTapSet taps = random_taps(rng, 64, channels);
  FusionConfig cfg;
  cfg.roi_pool_size = 2;
  cfg.shrink_channels = 3;
  DetectionHeadParams head(channels, cfg, 5);
  for (auto& n : head.norms) randomize(n, rng);
  randomize(head.shrink, rng);
  for (FcLayerParams* fc : {&head.fc1, &head.fc2, &head.cls, &head.bbox}) randomize(*fc, rng);
  std::vector<BBox> rois{random_roi(rng, 64.0, 4.0, 20.0), random_roi(rng, 64.0, 16.0, 60.0)};
  const DetectionOutput out = detection_forward(taps, rois, head, cfg);
  const Tensor r1 = uniform_tensor(out.logits.shape(), rng);
  const Tensor r2 = uniform_tensor(out.deltas.shape(), rng);
  std::vector<Tensor> tap_grads;
  for (const FeatureTap& tap : taps) tap_grads.push_back(Tensor::zeros_like(tap.map));
  detection_backward(taps, out, head, r1, r2, tap_grads);
  auto loss = [&] {
    const DetectionOutput o = detection_forward(taps, rois, head, cfg);
    return dot(o.logits, r1) + dot(o.deltas, r2);
  };
  for (std::size_t i = 0; i < taps.size(); ++i) t.probe(loss, taps[i].map, tap_grads[i]);
  for (Param* p : head.params()) t.probe(loss, p->value, p->grad);
}

// Tiny model on a noise image with two faces; targets are sampled once and
// then held fixed, so the loss is a smooth function of the parameters away
// from ReLU and max-pool kinks.
struct TinySetup {
  Model model;
  Scene scene;
  StepTargets targets;
};

TinySetup tiny_setup(Rng& rng) {
  TinySetup s{Model(ModelConfig::tiny(), rng.next()), {}, {}};
  for (ConvLayerParams& c : s.model.backbone) {
    for (double& v : c.bias.value.data()) v = rng.uniform(0.2, 0.5);
  }
  for (auto* norms : {&s.model.rpn_norms, &s.model.det_head.norms}) {
    for (auto& n : *norms) {
      for (double& v : n.gamma.value.data()) v = rng.uniform(0.5, 2.0);
    }
  }
  DetectionHeadParams& d = s.model.det_head;
  for (FcLayerParams* fc : {&d.fc1, &d.fc2, &d.cls, &d.bbox}) randomize(*fc, rng);
  s.scene.id = "gradcheck";
  s.scene.width = s.scene.height = 64;
  s.scene.image = uniform_tensor({1, 1, 64, 64}, rng, 0.0, 1.0);
  s.scene.gt_boxes = {random_roi(rng, 64.0, 12.0, 30.0), random_roi(rng, 64.0, 12.0, 30.0)};
  const SharedForward fwd = s.model.forward_shared(s.scene.image);
  s.targets = s.model.sample_targets(fwd, s.scene, rng);
  return s;
}

// Every ReLU on/off state, max-pool selection and smooth-L1 branch in a
// forward pass.
std::vector<std::size_t> activation_pattern(const Model& m, const SharedForward& f, const StepTargets& targets) {
  std::span<const BBox> rois = targets.det.rois;
  std::vector<std::size_t> p;
  auto mask = [&p](const Tensor& t) {
    for (double v : t.data()) p.push_back(v > 0.0 ? 1 : 0);
  };
  for (const Tensor& t : f.backbone.relu_outputs) mask(t);
  for (const PoolResult& r : f.backbone.pools) p.insert(p.end(), r.argmax.begin(), r.argmax.end());
  for (const PoolResult& r : f.rpn.fusion.synced) p.insert(p.end(), r.argmax.begin(), r.argmax.end());
  mask(f.rpn.head.hidden);
  const DetectionOutput det = detection_forward(f.taps, rois, m.det_head, m.config().fusion);
  for (const auto& a : det.pool_cache.argmax) p.insert(p.end(), a.begin(), a.end());
  mask(det.hidden1);
  mask(det.hidden2);
  auto smooth_l1_branch = [&p](const Tensor& pred, std::span<const int> labels, std::span<const Deltas> target) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != 1) continue;
      const double d[4] = {pred[4 * i] - target[i].tx, pred[4 * i + 1] - target[i].ty, pred[4 * i + 2] - target[i].tw,
                           pred[4 * i + 3] - target[i].th};
      for (double v : d) p.push_back(std::fabs(v) < 1.0 ? 1 : 0);
    }
  };
  smooth_l1_branch(gather_anchor_deltas(f.rpn.head.deltas), targets.rpn.labels, targets.rpn.target_deltas);
  smooth_l1_branch(det.deltas, targets.det.labels, targets.det.target_deltas);
  return p;
}

// Draws per seed before the end-to-end row gives up on finding a setup with no
// kink inside any stencil.
constexpr int kMaxSetupDraws = 20;

// False when some stencil straddles a kink; the draw is then abandoned.
bool check_end_to_end_once(Rng& rng, Tally& t) {
  TinySetup s = tiny_setup(rng);
  s.model.zero_grad();
  s.model.loss(s.model.forward_shared(s.scene.image), s.targets, 1.0, true);
  const std::vector<std::size_t> base =
      activation_pattern(s.model, s.model.forward_shared(s.scene.image), s.targets);
  auto eval = [&](bool& same_pattern) {
    const SharedForward f = s.model.forward_shared(s.scene.image);
    same_pattern = activation_pattern(s.model, f, s.targets) == base;
    return s.model.loss(f, s.targets, 1.0, false).total;
  };
  for (Param* p : s.model.params()) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double& x = p->value[i];
      const double orig = x;
      bool same_plus = false, same_minus = false;
      x = orig + t.h;
      const double lp = eval(same_plus);
      x = orig - t.h;
      const double lm = eval(same_minus);
      x = orig;
      if (!same_plus || !same_minus) {
        ++t.kinks;
        return false;
      }
      t.max_err = std::max(t.max_err, gradcheck_relative_error(p->grad[i], (lp - lm) / (2.0 * t.h)));
      ++t.checked;
    }
  }
  return true;
}

void check_end_to_end(Rng& rng, Tally& t) {
  for (int draw = 0; draw < kMaxSetupDraws; ++draw) {
    if (check_end_to_end_once(rng, t)) return;
  }
  ++t.unresolved;
}

void check_multitask_loss(Rng& rng, Tally& t) {
  TinySetup s = tiny_setup(rng);
  const SharedForward fwd = s.model.forward_shared(s.scene.image);
  Tensor rpn_logits = fwd.rpn.head.logits, rpn_deltas = fwd.rpn.head.deltas;
  const auto rois = static_cast<int>(s.targets.det.rois.size());
  Tensor det_logits = uniform_tensor({rois, 2}, rng, -2.0, 2.0);
  Tensor det_deltas = uniform_tensor({rois, 4}, rng, -0.8, 0.8);
  const double lambda = rng.uniform(0.5, 2.0);
  const MultitaskLoss ml =
      multitask_loss(rpn_logits, rpn_deltas, s.targets.rpn, det_logits, det_deltas, s.targets.det, lambda);
  auto loss = [&] {
    return multitask_loss(rpn_logits, rpn_deltas, s.targets.rpn, det_logits, det_deltas, s.targets.det, lambda)
        .parts.total;
  };
  t.probe(loss, rpn_logits, ml.grad_rpn_logits);
  t.probe(loss, rpn_deltas, ml.grad_rpn_deltas);
  t.probe(loss, det_logits, ml.grad_det_logits);
  t.probe(loss, det_deltas, ml.grad_det_deltas);
}

struct Check {
  const char* name;
  void (*fn)(Rng&, Tally&);
};

constexpr Check kChecks[] = {
    {"conv2d", check_conv2d},
    {"maxpool2d", check_maxpool2d},
    {"relu", check_relu},
    {"fully_connected", check_fully_connected},
    {"softmax_cross_entropy", check_softmax_cross_entropy},
    {"smooth_l1", check_smooth_l1},
    {"l2norm_scale", check_l2norm_scale},
    {"concat_shrink", check_concat_shrink},
    {"roi_pool", check_roi_pool},
    {"ms_roi_pool", check_ms_roi_pool},
    {"fuse_feature_maps", check_fuse_feature_maps},
    {"rpn_head", check_rpn_head},
    {"detection_head", check_detection_head},
    {"multitask_loss", check_multitask_loss},
    {"end_to_end_tiny_model", check_end_to_end},
};

}  // namespace

std::vector<GradCheckRow> run_gradcheck_suite(const GradCheckSuiteConfig& cfg) {
  if (cfg.seeds < 1) throw std::invalid_argument("gradcheck: seeds must be positive");
  std::vector<GradCheckRow> rows;
  for (std::size_t ci = 0; ci < std::size(kChecks); ++ci) {
    const Check& c = kChecks[ci];
    Tally tally;
    tally.h = cfg.h;
    for (int s = 0; s < cfg.seeds; ++s) {
      Rng rng(mix_seed(cfg.base_seed + static_cast<std::uint64_t>(s), ci));
      c.fn(rng, tally);
    }
    rows.push_back({c.name, cfg.seeds, tally.checked, tally.kinks, tally.max_err,
                    tally.checked > 0 && tally.unresolved == 0 && tally.max_err <= cfg.tolerance});
  }
  return rows;
}

std::string format_gradcheck_table(std::span<const GradCheckRow> rows) {
  std::string out = "op                      seeds  checked  redrawn  max_rel_error  status\n";
  for (const GradCheckRow& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-22s %6d %8d %8d %14.3e  %s\n", r.op.c_str(), r.seeds, r.checked, r.redrawn,
                  r.max_rel_error,
                  r.passed ? "ok" : "FAIL");
    out += buf;
  }
  return out;
}

}  // namespace msfr
