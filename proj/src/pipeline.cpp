#include "msfr/pipeline.hpp"

namespace msfr {

std::uint64_t init_seed(std::uint64_t run_seed) { return mix_seed(run_seed, 0x696e6974ULL); }

TrainedModel train_model(const ModelConfig& model_cfg, std::span<const Scene> scenes, const TrainConfig& cfg,
                         const TraceCallback& on_trace) {
  TrainedModel t{Model(model_cfg, init_seed(cfg.seed)), {}};
  t.trace = train(t.model, scenes, cfg, on_trace);
  return t;
}

DetectionMap detect_scenes(const Model& model, std::span<const Scene> scenes, double score_threshold,
                           double nms_threshold) {
  DetectionMap out;
  for (const Scene& s : scenes) {
    out[s.id] = model.detect(s.image, s.width, s.height, score_threshold, nms_threshold);
  }
  return out;
}

std::vector<AnnotatedImage> annotations_of(std::span<const Scene> scenes) {
  std::vector<AnnotatedImage> out;
  for (const Scene& s : scenes) out.push_back({s.id, s.gt_boxes});
  return out;
}

DatasetReport evaluate_model(const Model& model, std::span<const Scene> scenes, const RunConfig& cfg) {
  return evaluate_dataset(annotations_of(scenes), detect_scenes(model, scenes, cfg.eval_score_threshold, cfg.nms_threshold),
                          cfg.eval);
}

std::size_t parameter_count(Model& model) {
  std::size_t n = 0;
  for (const Param* p : model.params()) n += p->value.size();
  return n;
}

AblationResult run_ablation(std::span<const Scene> train, std::span<const Scene> test, const RunConfig& cfg) {
  AblationResult r;
  TrainedModel ms = train_model(cfg.model, train, cfg.train);
  r.multi_scale = evaluate_model(ms.model, test, cfg);
  r.multi_scale_params = parameter_count(ms.model);
  TrainedModel t5 = train_model(cfg.model.tap5_only(), train, cfg.train);
  r.tap5_only = evaluate_model(t5.model, test, cfg);
  r.tap5_only_params = parameter_count(t5.model);
  return r;
}

}  // namespace msfr
