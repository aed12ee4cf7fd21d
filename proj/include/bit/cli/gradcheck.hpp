#pragma once

#include <string>
#include <vector>

namespace bit::cli {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
};

inline constexpr double kGradCheckThreshold = 1e-4;

/// Central-difference checks of every differentiable operation and of both
/// training losses at toy dimensions. Fixed seeds; deterministic.
std::vector<GradCheckResult> run_gradcheck_suite();

}  // namespace bit::cli
