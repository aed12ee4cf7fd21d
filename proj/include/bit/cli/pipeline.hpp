#pragma once

#include "bit/cli/config.hpp"
#include "bit/encoder/encoder.hpp"
#include "bit/qascore/qascore.hpp"
#include "bit/retrieval/retrieval.hpp"
#include "bit/synthdata/dataset.hpp"

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <memory>

namespace bit::cli {

/// Receives one JSON object per finished epoch.
using EpochLog = std::function<void(const nlohmann::json&)>;

/// ceil(training samples / (2 * P * K)).
std::int64_t steps_per_epoch(const synth::Dataset& ds, const BatchConfig& batch);

/// Sub-seeds derived from the run seed, one per random consumer.
enum class SeedStream : std::uint64_t { kEncoderInit = 1, kMatcherInit = 2, kStage1Batches = 3, kStage2Batches = 4 };
std::uint64_t derived_seed(const RunConfig& cfg, SeedStream stream);

encoder::EncoderModel make_encoder(const RunConfig& cfg);
std::unique_ptr<qa::MatchingModel> make_matcher(const RunConfig& cfg);

void train_stage1(encoder::EncoderModel& enc, const synth::Dataset& ds, const RunConfig& cfg,
                  const EpochLog& log = {});
/// Throws CheckFailure if the encoder changed.
void train_stage2(const encoder::EncoderModel& enc, qa::MatchingModel& model, const synth::Dataset& ds,
                  const RunConfig& cfg, const EpochLog& log = {});

struct TrainedRun {
  encoder::EncoderModel encoder;
  std::unique_ptr<qa::MatchingModel> matcher;
};

/// Both stages from scratch.
TrainedRun train_full(const synth::Dataset& ds, const RunConfig& cfg, const EpochLog& log = {});

/// Rows of the imbalance study: for each fraction, BIT then the cosine baseline.
struct ImbalanceRow {
  double fraction = 0.0;
  std::string setting;
  std::string model;
  double rank1 = 0.0;
  double mAP = 0.0;
};

std::vector<ImbalanceRow> imbalance_study(const synth::Dataset& ds, const RunConfig& cfg,
                                          const std::vector<double>& fractions, synth::Modality modality,
                                          int top_K);

}  // namespace bit::cli
