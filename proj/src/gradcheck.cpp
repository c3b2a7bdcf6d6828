#include "msfr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace msfr {

double gradcheck_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult finite_difference_check(const std::function<double()>& loss, std::span<double> point,
                                        std::span<const double> analytic, double h) {
  if (point.size() != analytic.size()) {
    throw std::invalid_argument("finite_difference_check: " + std::to_string(point.size()) + " parameters but " +
                                std::to_string(analytic.size()) + " analytic gradients");
  }
  GradCheckResult r;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + h;
    const double up = loss();
    point[i] = saved - h;
    const double down = loss();
    point[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err = gradcheck_relative_error(analytic[i], numeric);
    if (i == 0 || err > r.max_rel_error) {
      r = {err, i, analytic[i], numeric};
    }
  }
  return r;
}

}  // namespace msfr
