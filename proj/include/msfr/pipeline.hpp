#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "msfr/config.hpp"
#include "msfr/evaluation.hpp"
#include "msfr/model.hpp"
#include "msfr/scene.hpp"
#include "msfr/training.hpp"

namespace msfr {

/// Parameter-init seed used by `train` for a given run seed.
std::uint64_t init_seed(std::uint64_t run_seed);

/// Fresh model for the run config, trained on `scenes`.
struct TrainedModel {
  Model model;
  std::vector<TraceRow> trace;
};
TrainedModel train_model(const ModelConfig& model_cfg, std::span<const Scene> scenes, const TrainConfig& cfg,
                         const TraceCallback& on_trace = {});

using DetectionMap = std::map<std::string, std::vector<Detection>>;

DetectionMap detect_scenes(const Model& model, std::span<const Scene> scenes, double score_threshold,
                           double nms_threshold);

std::vector<AnnotatedImage> annotations_of(std::span<const Scene> scenes);

/// Detections at eval_score_threshold, scored against the scenes' boxes.
DatasetReport evaluate_model(const Model& model, std::span<const Scene> scenes, const RunConfig& cfg);

struct AblationResult {
  DatasetReport multi_scale;
  DatasetReport tap5_only;
  std::size_t multi_scale_params = 0;
  std::size_t tap5_only_params = 0;
};

/// Trains the fused model and the tap5-only model with the same seed and data.
AblationResult run_ablation(std::span<const Scene> train, std::span<const Scene> test, const RunConfig& cfg);

std::size_t parameter_count(Model& model);

}  // namespace msfr
