#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace msfr {

struct GradCheckRow {
  std::string op;
  int seeds = 0;
  int checked = 0;  // number of scalar derivatives compared, over all seeds
  int redrawn = 0;  // end-to-end setups abandoned because a stencil straddled a ReLU/max kink
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckSuiteConfig {
  int seeds = 5;
  std::uint64_t base_seed = 1;
  double tolerance = 1e-4;
  double h = 1e-5;
};

/// Finite-difference check of every differentiable operation, ending with the
/// full multi-task loss on a tiny model. Losses are random weighted sums of
/// the outputs; layer inputs are drawn away from ReLU, max and smooth-L1
/// kinks. For the full model, a setup where any stencil changes a ReLU mask,
/// max selection or smooth-L1 branch relative to the base point is redrawn;
/// derivatives checked before the kink still count. A seed that finds no
/// kink-free setup fails the row.
std::vector<GradCheckRow> run_gradcheck_suite(const GradCheckSuiteConfig& cfg = {});

std::string format_gradcheck_table(std::span<const GradCheckRow> rows);

}  // namespace msfr
