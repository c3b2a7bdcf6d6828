#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace msfr {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;

  bool passed(double tol) const { return max_rel_error <= tol; }
};

/// |a - n| / max(|a|, |n|, 1e-8)
double gradcheck_relative_error(double analytic, double numeric);

/// Central differences of `loss` w.r.t. each entry of `point`, compared with
/// `analytic`. `loss` must read the current contents of `point`, which is
/// perturbed in place and restored exactly before returning.
GradCheckResult finite_difference_check(const std::function<double()>& loss, std::span<double> point,
                                        std::span<const double> analytic, double h = 1e-5);

}  // namespace msfr
