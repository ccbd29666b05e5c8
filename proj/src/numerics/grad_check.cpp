#include "invarirank/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "invarirank/errors.hpp"

namespace invarirank::numerics {

GradCheckResult GradCheck(std::span<double> params, std::span<const double> analytic,
                          const std::function<double()>& objective,
                          const GradCheckOptions& options) {
  if (!(options.epsilon > 0.0)) throw ContractError("grad_check: epsilon must be positive");
  if (analytic.size() != params.size()) {
    throw DimensionError("grad_check: gradient and parameter counts differ");
  }
  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (options.samples < coords.size()) {
    std::mt19937_64 rng(options.seed);
    // Partial Fisher-Yates: the first `samples` entries become a uniform sample.
    for (std::size_t i = 0; i < options.samples; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, coords.size() - 1);
      std::swap(coords[i], coords[pick(rng)]);
    }
    coords.resize(options.samples);
  }

  auto evaluate = [&objective] {
    const double value = objective();
    if (!std::isfinite(value)) throw NumericError("grad_check: objective is not finite");
    return value;
  };

  GradCheckResult result;
  for (std::size_t c : coords) {
    const double saved = params[c];
    params[c] = saved + options.epsilon;
    const double up = evaluate();
    params[c] = saved - options.epsilon;
    const double down = evaluate();
    params[c] = saved;
    const double numeric = (up - down) / (2.0 * options.epsilon);
    const double denom = std::max({std::abs(analytic[c]), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic[c] - numeric) / denom;
    if (rel > result.max_relative_error || result.checked == 0) {
      result.max_relative_error = rel;
      result.worst_coordinate = c;
      result.worst_analytic = analytic[c];
      result.worst_numeric = numeric;
    }
    ++result.checked;
  }
  return result;
}

}  // namespace invarirank::numerics
