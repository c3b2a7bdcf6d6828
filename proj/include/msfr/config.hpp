#pragma once

#include <string>
#include <vector>

#include "msfr/evaluation.hpp"
#include "msfr/model.hpp"
#include "msfr/toy_data.hpp"
#include "msfr/training.hpp"

namespace msfr {

/// Everything a CLI run can be configured with. Defaults are the reference
/// configuration.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;

  double score_threshold = 0.8;        // detect output
  double eval_score_threshold = 0.01;  // detections fed to AP inside ablate
  double nms_threshold = 0.3;          // final per-class NMS

  int n_images = 500;  // gen-data
  FaceScaleRange faces;

  std::string data_dir;
  std::string train_annotations;
  std::string test_annotations;
  std::string checkpoint;
  std::string trace;
  std::string detections_dir;
  std::string overlay_dir;
  std::string report;

  /// Throws std::invalid_argument on any out-of-range value.
  void validate() const;
};

/// Sets one key; throws std::invalid_argument on an unknown key or bad value.
void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Flat "key = value" lines; '#' starts a comment. Errors carry line numbers.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source = "<config>");
void apply_config_file(RunConfig& cfg, const std::string& path);

std::vector<std::string> config_keys();

}  // namespace msfr
