#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

namespace invarirank::numerics {

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// Coordinates to probe; all of them when >= the parameter count.
  std::size_t samples = 100;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_coordinate = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares `analytic` against central differences of `objective` on sampled
/// coordinates of `params`. The objective reads `params` in place; every
/// probed coordinate is restored before returning. Relative error uses the
/// denominator max(|analytic|, |numeric|, 1e-8). Throws NumericError when the
/// objective is not finite.
GradCheckResult GradCheck(std::span<double> params, std::span<const double> analytic,
                          const std::function<double()>& objective,
                          const GradCheckOptions& options = {});

}  // namespace invarirank::numerics
