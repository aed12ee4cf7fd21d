#pragma once

#include "bit/nn/parameters.hpp"

#include <cstdint>

namespace bit::nn {

struct OptimizerConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  std::int64_t total_steps = 1;
  double min_lr = 3e-6;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

/// min_lr + (lr - min_lr) (1 + cos(pi step / total_steps)) / 2, for 0 <= step <= total_steps.
double cosine_lr(const OptimizerConfig& cfg, std::int64_t step);

/// One AdamW update: decoupled weight decay, then the bias-corrected Adam step.
///
/// Every parameter must carry a gradient; gradients are left in place.
void adamw_step(ParameterSet& params, const OptimizerConfig& cfg, double lr_t);

}  // namespace bit::nn
