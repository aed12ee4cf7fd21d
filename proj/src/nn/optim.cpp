#include "bit/nn/optim.hpp"

#include "bit/errors.hpp"

#include <cmath>
#include <numbers>

namespace bit::nn {

void OptimizerConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("optimizer: lr must be positive");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) {
    throw ConfigError("optimizer: betas must lie in (0, 1)");
  }
  if (!(eps >= 0)) throw ConfigError("optimizer: eps must be non-negative");
  if (!(weight_decay >= 0)) throw ConfigError("optimizer: weight_decay must be non-negative");
  if (total_steps < 1) throw ConfigError("optimizer: total_steps must be positive");
  if (!(min_lr >= 0 && min_lr <= lr)) throw ConfigError("optimizer: min_lr must lie in [0, lr]");
}

double cosine_lr(const OptimizerConfig& cfg, std::int64_t step) {
  if (step < 0 || step > cfg.total_steps) {
    throw UsageError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                     std::to_string(cfg.total_steps) + "]");
  }
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.min_lr + (cfg.lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

void adamw_step(ParameterSet& params, const OptimizerConfig& cfg, double lr_t) {
  if (!(lr_t >= 0)) throw UsageError("adamw_step: learning rate must be non-negative");
  for (const auto& slot : params.slots()) {
    if (!slot.value.has_grad()) {
      throw UsageError("adamw_step: parameter '" + slot.name + "' has no gradient");
    }
  }
  params.advance_step();
  const double t = static_cast<double>(params.step());
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& slot : params.slots()) {
    Matrix& w = slot.value.mutable_value();
    const Matrix& g = slot.value.grad();
    w *= 1.0 - lr_t * cfg.weight_decay;
    slot.m = cfg.beta1 * slot.m + (1.0 - cfg.beta1) * g;
    slot.v = cfg.beta2 * slot.v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    const auto denom = (slot.v.array() / bc2).sqrt() + cfg.eps;
    // 0/0 only arises for an all-zero history with eps = 0; that update is zero.
    w.array() -= (denom > 0.0).select(lr_t * (slot.m.array() / bc1) / denom, 0.0);
  }
}

}  // namespace bit::nn
