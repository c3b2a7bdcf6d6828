#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "msfr/loss.hpp"
#include "msfr/model.hpp"
#include "msfr/scene.hpp"

namespace msfr {

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lambda = 1.0;
  int iterations = 4000;
  std::uint64_t seed = 7;
  int image_size = 128;
  bool lr_drop = false;  // 10x drop at 75% of iterations
  int trace_every = 10;

  /// Throws std::invalid_argument on a non-positive rate, bad image size, etc.
  void validate() const;
};

struct SgdState {
  std::vector<Tensor> velocity;
};

/// v <- momentum * v - lr * (g + weight_decay * p); p <- p + v.
/// Throws std::runtime_error naming the parameter on a non-finite gradient.
void sgd_momentum_step(std::span<Param* const> params, SgdState& state, double learning_rate, double momentum,
                       double weight_decay);

/// Loss averaged over the `trace_every` iterations ending at `iteration`.
struct TraceRow {
  int iteration = 0;
  LossComponents loss;
};

std::string format_trace_row(const TraceRow& row);
std::string format_trace(std::span<const TraceRow> rows);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::vector<TraceRow> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<TraceRow>& trace() const { return trace_; }

 private:
  std::vector<TraceRow> trace_;
};

using TraceCallback = std::function<void(const TraceRow&)>;

/// Joint end-to-end SGD over every model parameter, one image per iteration.
/// Image order is a seeded per-epoch shuffle; target sampling for image i is
/// seeded from (seed, i), so identical inputs give bit-identical traces.
std::vector<TraceRow> train(Model& model, std::span<const Scene> dataset, const TrainConfig& cfg,
                            const TraceCallback& on_trace = {});

}  // namespace msfr
