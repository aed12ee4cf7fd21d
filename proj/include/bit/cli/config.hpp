#pragma once

#include "bit/bci/bci.hpp"
#include "bit/encoder/encoder.hpp"
#include "bit/nn/optim.hpp"
#include "bit/qascore/qascore.hpp"
#include "bit/synthdata/dataset.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>

namespace bit::cli {

struct BatchConfig {
  int P = 4;
  int K = 4;

  bool operator==(const BatchConfig&) const = default;
};

/// Per-stage optimizer settings. `min_lr` follows `lr / 100` unless set explicitly.
struct StageOptim {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  std::optional<double> min_lr;

  nn::OptimizerConfig resolve(std::int64_t total_steps) const;
  bool operator==(const StageOptim&) const = default;
};

/// Everything a run depends on. The dataset seed lives in `gen.seed`; `seed`
/// drives initialization and batch sampling.
struct RunConfig {
  synth::GenConfig gen;
  encoder::EncoderConfig encoder;
  bci::BciConfig bci;
  qa::QaConfig qa;
  StageOptim stage1_optim;
  StageOptim stage2_optim;
  int stage1_epochs = 8;
  int stage2_epochs = 12;
  BatchConfig batch;
  std::uint64_t seed = 0;

  /// Checks every nested invariant plus the cross-module agreements
  /// (raw_dim, patch count, channel width, train identity count).
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Unknown keys are rejected at every level; missing keys keep their defaults.
/// Encoder raw_dim, patches and num_train_identities default to the values
/// implied by `gen` when absent.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

/// Seed from the BIT_SEED environment variable, if set. Malformed values are a ConfigError.
std::optional<std::uint64_t> seed_from_env();

}  // namespace bit::cli
