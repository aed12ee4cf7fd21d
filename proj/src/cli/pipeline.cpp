#include "bit/cli/pipeline.hpp"

#include "bit/errors.hpp"
#include "bit/nn/optim.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

namespace bit::cli {

std::int64_t steps_per_epoch(const synth::Dataset& ds, const BatchConfig& batch) {
  const auto n = static_cast<std::int64_t>(ds.indices(synth::Split::kTrain).size());
  const std::int64_t per_batch = 2LL * batch.P * batch.K;
  if (n == 0) throw UsageError("dataset has no training samples");
  return (n + per_batch - 1) / per_batch;
}

std::uint64_t derived_seed(const RunConfig& cfg, SeedStream stream) {
  return synth::mix_seed(cfg.seed, static_cast<std::uint64_t>(stream));
}

encoder::EncoderModel make_encoder(const RunConfig& cfg) {
  return encoder::EncoderModel(cfg.encoder, derived_seed(cfg, SeedStream::kEncoderInit));
}

std::unique_ptr<qa::MatchingModel> make_matcher(const RunConfig& cfg) {
  return std::make_unique<qa::MatchingModel>(cfg.bci, cfg.qa, cfg.encoder.patches,
                                             derived_seed(cfg, SeedStream::kMatcherInit));
}

void train_stage1(encoder::EncoderModel& enc, const synth::Dataset& ds, const RunConfig& cfg, const EpochLog& log) {
  const std::int64_t spe = steps_per_epoch(ds, cfg.batch);
  const nn::OptimizerConfig optim = cfg.stage1_optim.resolve(spe * cfg.stage1_epochs);
  const std::uint64_t seed = derived_seed(cfg, SeedStream::kStage1Batches);
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
    double id = 0.0, tri = 0.0;
    for (std::int64_t s = 0; s < spe; ++s, ++step) {
      const auto batch = synth::sample_pk_batch(ds, cfg.batch.P, cfg.batch.K, seed, step);
      const auto l = encoder::stage1_step(enc, ds, batch, optim, nn::cosine_lr(optim, step));
      id += l.id;
      tri += l.triplet;
    }
    if (log) {
      log({{"stage", 1},
           {"epoch", epoch + 1},
           {"lr", nn::cosine_lr(optim, step)},
           {"id_loss", id / static_cast<double>(spe)},
           {"triplet_loss", tri / static_cast<double>(spe)},
           {"loss", (id + tri) / static_cast<double>(spe)}});
    }
  }
}

void train_stage2(const encoder::EncoderModel& enc, qa::MatchingModel& model, const synth::Dataset& ds,
                  const RunConfig& cfg, const EpochLog& log) {
  std::vector<Matrix> frozen;
  for (const auto& s : enc.params().slots()) frozen.push_back(s.value.value());

  const std::int64_t spe = steps_per_epoch(ds, cfg.batch);
  const nn::OptimizerConfig optim = cfg.stage2_optim.resolve(spe * cfg.stage2_epochs);
  const std::uint64_t seed = derived_seed(cfg, SeedStream::kStage2Batches);
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
    double pair = 0.0, ac = 0.0, total = 0.0;
    for (std::int64_t s = 0; s < spe; ++s, ++step) {
      const auto batch = synth::sample_pk_batch(ds, cfg.batch.P, cfg.batch.K, seed, step);
      const auto l = qa::stage2_step(enc, model, ds, batch, optim, nn::cosine_lr(optim, step));
      pair += l.pair;
      ac += l.ac;
      total += l.total;
    }
    if (log) {
      log({{"stage", 2},
           {"epoch", epoch + 1},
           {"lr", nn::cosine_lr(optim, step)},
           {"pair_loss", pair / static_cast<double>(spe)},
           {"ac_loss", ac / static_cast<double>(spe)},
           {"loss", total / static_cast<double>(spe)}});
    }
  }

  const auto& slots = enc.params().slots();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Matrix& now = slots[i].value.value();
    if (now.rows() != frozen[i].rows() || now.cols() != frozen[i].cols() ||
        std::memcmp(now.data(), frozen[i].data(), sizeof(double) * static_cast<std::size_t>(now.size())) != 0) {
      throw CheckFailure("encoder parameter '" + slots[i].name + "' changed during stage 2");
    }
  }
}

TrainedRun train_full(const synth::Dataset& ds, const RunConfig& cfg, const EpochLog& log) {
  TrainedRun run{make_encoder(cfg), make_matcher(cfg)};
  train_stage1(run.encoder, ds, cfg, log);
  train_stage2(run.encoder, *run.matcher, ds, cfg, log);
  return run;
}

std::vector<ImbalanceRow> imbalance_study(const synth::Dataset& ds, const RunConfig& cfg,
                                          const std::vector<double>& fractions, synth::Modality modality,
                                          int top_K) {
  std::vector<ImbalanceRow> rows;
  for (double f : fractions) {
    const synth::Dataset reduced = synth::reduce_modality(ds, modality, f, synth::mix_seed(cfg.seed, 5));
    const TrainedRun run = train_full(reduced, cfg);
    char setting[64];
    std::snprintf(setting, sizeof(setting), "%s -%g%%", modality == synth::Modality::kInfrared ? "ir" : "vis",
                  std::round(f * 1000.0) / 10.0);
    const auto bit = retrieval::evaluate(run.encoder, run.matcher.get(), reduced, {top_K, true});
    const auto base = retrieval::evaluate(run.encoder, nullptr, reduced, {top_K, false});
    rows.push_back({f, setting, "BIT", bit.rank1(), bit.metrics.mAP});
    rows.push_back({f, setting, "baseline", base.rank1(), base.metrics.mAP});
  }
  return rows;
}

}  // namespace bit::cli
