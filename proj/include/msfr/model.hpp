#pragma once

#include <cstdint>
#include <vector>

#include "msfr/detection.hpp"
#include "msfr/fusion.hpp"
#include "msfr/layers.hpp"
#include "msfr/loss.hpp"
#include "msfr/rng.hpp"
#include "msfr/rpn.hpp"
#include "msfr/scene.hpp"

namespace msfr {

/// VGG-style stages of 3x3 convs + ReLU; 2x2 max-pool after every stage but
/// the last. Stages 3, 4 and 5 are exported as tap3, tap4, tap5.
struct BackboneConfig {
  int in_channels = 1;
  std::vector<int> stage_channels{8, 16, 32, 64, 64};
  int convs_per_stage = 2;
};

struct ModelConfig {
  BackboneConfig backbone;
  FusionConfig fusion;
  AnchorConfig anchors;
  int rpn_hidden = 256;
  int head_hidden = 256;
  ProposalConfig train_proposals;
  ProposalConfig test_proposals;
  RpnTargetConfig rpn_targets;
  DetTargetConfig det_targets;

  /// Conv5-only baseline: fusion restricted to tap5, detection head widened
  /// to the closest parameter count to this config.
  ModelConfig tap5_only() const;
  /// Small widths for exhaustive finite-difference checks.
  static ModelConfig tiny();
};

struct BackboneCache {
  std::vector<Tensor> conv_inputs;
  std::vector<Tensor> relu_outputs;
  std::vector<PoolResult> pools;
};

struct RpnPass {
  FusedMapCache fusion;
  Tensor fused;
  RpnOutput head;
  std::vector<BBox> anchors;
};

/// Everything computed once per image and shared by both branches.
struct SharedForward {
  BackboneCache backbone;
  FeatureTapSet taps;
  RpnPass rpn;
};

struct StepTargets {
  RpnTargets rpn;
  DetTargets det;
};

/// Which branch losses send gradient into the shared layers.
struct LossBranches {
  bool rpn = true;
  bool det = true;
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param*> params();
  void zero_grad();

  FeatureTapSet backbone_forward(const Tensor& image, BackboneCache* cache) const;
  /// tap_grads indexed like the tap set; missing entries count as zero.
  void backbone_backward(const BackboneCache& cache, std::vector<Tensor>& tap_grads);

  SharedForward forward_shared(const Tensor& image) const;

  std::vector<Proposal> proposals(const SharedForward& fwd, double image_w, double image_h,
                                  const ProposalConfig& cfg) const;

  /// Proposals + RPN/detection target assignment for one training image.
  StepTargets sample_targets(const SharedForward& fwd, const Scene& scene, Rng& rng) const;

  /// Multi-task loss for fixed targets; with `backward` set, accumulates
  /// gradients into every parameter through a single backbone pass.
  LossComponents loss(const SharedForward& fwd, const StepTargets& targets, double lambda, bool backward,
                      LossBranches branches = {});

  std::vector<Detection> detect(const Tensor& image, double image_w, double image_h, double score_threshold,
                                double nms_threshold) const;

  std::vector<ConvLayerParams> backbone;
  std::vector<L2NormScaleLayer> rpn_norms;
  ConvLayerParams rpn_shrink;
  RpnHeadParams rpn_head;
  DetectionHeadParams det_head;

 private:
  ModelConfig cfg_;
  std::vector<int> tap_channels_;
};

}  // namespace msfr
