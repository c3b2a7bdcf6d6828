#include "msfr/training.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "msfr/rng.hpp"

namespace msfr {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw std::invalid_argument("learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (iterations < 1) throw std::invalid_argument("iterations must be positive");
  if (image_size < 16 || image_size % 16 != 0) throw std::invalid_argument("image_size must be a positive multiple of 16");
  if (trace_every < 1) throw std::invalid_argument("trace_every must be positive");
}

void sgd_momentum_step(std::span<Param* const> params, SgdState& state, double learning_rate, double momentum,
                       double weight_decay) {
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const Param* p : params) state.velocity.push_back(Tensor::zeros_like(p->value));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    require_same_shape(p.value, p.grad, p.name.c_str());
    for (double g : p.grad.data()) {
      if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    Tensor& v = state.velocity[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      v[j] = momentum * v[j] - learning_rate * (p.grad[j] + weight_decay * p.value[j]);
      p.value[j] += v[j];
    }
  }
}

std::string format_trace_row(const TraceRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f %.6f", row.iteration, row.loss.total, row.loss.rpn_cls,
                row.loss.rpn_reg, row.loss.det_cls, row.loss.det_reg);
  return buf;
}

std::string format_trace(std::span<const TraceRow> rows) {
  std::string out;
  for (const TraceRow& r : rows) out += format_trace_row(r) + "\n";
  return out;
}

std::vector<TraceRow> train(Model& model, std::span<const Scene> dataset, const TrainConfig& cfg,
                            const TraceCallback& on_trace) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  std::vector<Param*> params = model.params();
  SgdState sgd;
  Rng order_rng(mix_seed(cfg.seed, 0x6f72646572ULL));
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::vector<TraceRow> trace;
  LossComponents window;
  int window_len = 0;

  for (int it = 1; it <= cfg.iterations; ++it) {
    if (cursor == order.size()) {
      order.resize(dataset.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      order_rng.shuffle(order);
      cursor = 0;
    }
    const std::size_t idx = order[cursor++];
    const Scene& scene = dataset[idx];

    Rng sample_rng(mix_seed(cfg.seed, idx + 1));
    const SharedForward fwd = model.forward_shared(scene.image);
    const StepTargets targets = model.sample_targets(fwd, scene, sample_rng);
    model.zero_grad();
    const LossComponents loss = model.loss(fwd, targets, cfg.lambda, true);
    if (!std::isfinite(loss.total)) {
      throw TrainingDiverged("training diverged at iteration " + std::to_string(it) + " (image " + scene.id + ")",
                             trace);
    }
    const bool dropped = cfg.lr_drop && it > (cfg.iterations * 3) / 4;
    sgd_momentum_step(params, sgd, dropped ? cfg.learning_rate * 0.1 : cfg.learning_rate, cfg.momentum,
                      cfg.weight_decay);

    window.total += loss.total;
    window.rpn_cls += loss.rpn_cls;
    window.rpn_reg += loss.rpn_reg;
    window.det_cls += loss.det_cls;
    window.det_reg += loss.det_reg;
    ++window_len;
    if (it % cfg.trace_every == 0 || it == cfg.iterations) {
      const double n = window_len;
      TraceRow row{it, {window.total / n, window.rpn_cls / n, window.rpn_reg / n, window.det_cls / n,
                        window.det_reg / n}};
      trace.push_back(row);
      if (on_trace) on_trace(row);
      window = {};
      window_len = 0;
    }
  }
  return trace;
}

}  // namespace msfr
