#include "bit/cli/commands.hpp"

#include "bit/cli/checkpoint.hpp"
#include "bit/cli/gradcheck.hpp"
#include "bit/cli/pipeline.hpp"
#include "bit/diffcore/tensor.hpp"
#include "bit/errors.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>

namespace bit::cli {

namespace {

using Json = nlohmann::json;

int guarded(const char* name, std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const CheckFailure& e) {
    err << name << ": check failed: " << e.what() << "\n";
    return kExitCheckFailed;
  } catch (const std::exception& e) {
    err << name << ": " << e.what() << "\n";
    return kExitUsage;
  }
}

std::optional<std::uint64_t> seed_override(const Options& opts) {
  if (opts.seed) return opts.seed;
  return seed_from_env();
}

RunConfig config_or_default(const Options& opts) {
  return opts.config ? load_run_config(*opts.config) : RunConfig{};
}

synth::Dataset dataset_for(const Options& opts, const RunConfig& cfg) {
  if (!opts.data) return synth::generate(cfg.gen);
  synth::Dataset ds = synth::load(*opts.data);
  if (ds.config.patches != cfg.encoder.patches || ds.config.raw_dim != cfg.encoder.raw_dim) {
    throw ConfigError("dataset " + opts.data->string() + " does not match the encoder's patch count or raw_dim");
  }
  return ds;
}

void emit(const Json& doc, const Options& opts, std::ostream& out) {
  const std::string text = doc.dump(2) + "\n";
  if (!opts.out) {
    out << text;
    return;
  }
  std::ofstream f(*opts.out, std::ios::binary | std::ios::trunc);
  if (!f) throw UsageError("cannot write " + opts.out->string());
  f << text;
}

synth::Modality modality_flag(const std::string& s) {
  if (s == "ir") return synth::Modality::kInfrared;
  if (s == "vis") return synth::Modality::kVisible;
  throw UsageError("--modality must be 'vis' or 'ir', got '" + s + "'");
}

int top_k_flag(const Options& opts) {
  const int k = opts.top_K.value_or(retrieval::InferenceConfig{}.top_K);
  if (k < 1) throw UsageError("--top-K must be at least 1");
  return k;
}

// Config for commands that start from a checkpoint: --config wins, otherwise
// the snapshot stored in the checkpoint.
RunConfig config_for_checkpoint(const Options& opts, const Checkpoint& ck) {
  RunConfig cfg = opts.config ? load_run_config(*opts.config) : ck.config;
  if (!(cfg.encoder == ck.config.encoder)) {
    throw ConfigError("encoder settings differ from those stored in checkpoint " + opts.checkpoint->string());
  }
  if (auto s = seed_override(opts)) cfg.seed = *s;
  return cfg;
}

struct LoadedModels {
  RunConfig cfg;
  encoder::EncoderModel encoder;
  std::unique_ptr<qa::MatchingModel> matcher;
};

LoadedModels load_models(const Options& opts, bool need_matcher) {
  if (!opts.checkpoint) throw UsageError("--checkpoint is required");
  const Checkpoint ck = load_checkpoint(*opts.checkpoint);
  RunConfig cfg = config_for_checkpoint(opts, ck);
  LoadedModels m{cfg, make_encoder(cfg), nullptr};
  ck.restore(m.encoder.params());
  if (need_matcher) {
    if (ck.stage != 2) {
      throw UsageError("checkpoint " + opts.checkpoint->string() +
                       " holds only a stage-1 encoder; train stage 2 or pass --baseline");
    }
    if (!(cfg.bci == ck.config.bci) || !(cfg.qa == ck.config.qa)) {
      throw ConfigError("matching-model settings differ from those stored in the checkpoint");
    }
    m.matcher = make_matcher(cfg);
    ck.restore(m.matcher->params());
  }
  return m;
}

}  // namespace

std::filesystem::path metrics_log_path(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".log.jsonl";
}

int cmd_gen_data(const Options& opts, std::ostream& out, std::ostream& err) {
  return guarded("gen-data", err, [&] {
    if (!opts.out) throw UsageError("--out is required");
    RunConfig cfg = config_or_default(opts);
    if (auto s = seed_override(opts)) cfg.gen.seed = *s;
    cfg.gen.validate();
    const synth::Dataset ds = synth::generate(cfg.gen);
    synth::save(ds, *opts.out);

    const auto vis = ds.count(synth::Split::kTrain, synth::Modality::kVisible);
    const auto ir = ds.count(synth::Split::kTrain, synth::Modality::kInfrared);
    out << Json{{"identities", cfg.gen.num_identities},
                {"train_identities", cfg.gen.num_train_identities()},
                {"test_identities", cfg.gen.num_test_identities},
                {"samples", ds.samples.size()},
                {"train_visible", vis},
                {"train_infrared", ir},
                {"query", ds.count(synth::Split::kQuery, synth::Modality::kInfrared)},
                {"gallery", ds.count(synth::Split::kGallery, synth::Modality::kVisible)},
                {"vis_ir_ratio", ir == 0 ? 0.0 : static_cast<double>(vis) / static_cast<double>(ir)}}
               .dump()
        << "\n";
    return kExitOk;
  });
}

int cmd_train(const Options& opts, std::ostream& out, std::ostream& err) {
  return guarded("train", err, [&] {
    if (opts.stage != 1 && opts.stage != 2) throw UsageError("--stage must be 1 or 2");
    if (!opts.out) throw UsageError("--out is required");

    std::ofstream log_file;
    auto open_log = [&] {
      log_file.open(metrics_log_path(*opts.out), std::ios::binary | std::ios::trunc);
      if (!log_file) throw UsageError("cannot write " + metrics_log_path(*opts.out).string());
    };
    Json last;
    auto log = [&](const Json& line) {
      log_file << line.dump() << "\n";
      last = line;
    };

    Checkpoint result;
    if (opts.stage == 1) {
      RunConfig cfg = config_or_default(opts);
      if (auto s = seed_override(opts)) cfg.seed = *s;
      cfg.validate();
      const synth::Dataset ds = dataset_for(opts, cfg);
      encoder::EncoderModel enc = make_encoder(cfg);
      open_log();
      train_stage1(enc, ds, cfg, log);
      result.stage = 1;
      result.config = cfg;
      result.add(enc.params());
    } else {
      if (!opts.checkpoint) {
        throw UsageError("stage 2 needs the stage-1 backbone: pass --checkpoint <stage-1 checkpoint>");
      }
      LoadedModels m = load_models(opts, false);
      const synth::Dataset ds = dataset_for(opts, m.cfg);
      auto matcher = make_matcher(m.cfg);
      open_log();
      train_stage2(m.encoder, *matcher, ds, m.cfg, log);
      result.stage = 2;
      result.config = m.cfg;
      result.add(m.encoder.params());
      result.add(matcher->params());
    }
    log_file.close();
    save_checkpoint(result, *opts.out);
    out << last.dump() << "\n";
    return kExitOk;
  });
}

int cmd_eval(const Options& opts, std::ostream& out, std::ostream& err) {
  return guarded("eval", err, [&] {
    LoadedModels m = load_models(opts, !opts.baseline);
    const synth::Dataset ds = dataset_for(opts, m.cfg);
    const retrieval::InferenceConfig ic{top_k_flag(opts), !opts.baseline};
    emit(retrieval::to_json(retrieval::evaluate(m.encoder, m.matcher.get(), ds, ic)), opts, out);
    return kExitOk;
  });
}

int cmd_imbalance(const Options& opts, std::ostream& out, std::ostream& err) {
  return guarded("imbalance", err, [&] {
    RunConfig cfg = config_or_default(opts);
    if (auto s = seed_override(opts)) cfg.seed = *s;
    cfg.validate();
    const synth::Modality modality = modality_flag(opts.modality);
    if (opts.fractions.empty()) throw UsageError("--fractions must list at least one value");
    for (double f : opts.fractions)
      if (!(f >= 0.0 && f < 1.0)) throw UsageError("--fractions values must lie in [0, 1)");
    const synth::Dataset ds = dataset_for(opts, cfg);
    auto rows = Json::array();
    for (const auto& r : imbalance_study(ds, cfg, opts.fractions, modality, top_k_flag(opts))) {
      rows.push_back({{"setting", r.setting}, {"fraction", r.fraction}, {"model", r.model},
                      {"Rank-1", r.rank1}, {"mAP", r.mAP}});
    }
    emit({{"modality", opts.modality}, {"rows", rows}}, opts, out);
    return kExitOk;
  });
}

int cmd_gradcheck(const Options& opts, std::ostream& out, std::ostream& err) {
  return guarded("gradcheck", err, [&] {
    diff::testing::corrupt_rule(opts.corrupt_op);
    std::vector<GradCheckResult> results;
    try {
      results = run_gradcheck_suite();
    } catch (...) {
      diff::testing::corrupt_rule("");
      throw;
    }
    diff::testing::corrupt_rule("");

    std::vector<std::string> failed;
    for (const auto& r : results) {
      const bool ok = r.max_rel_error < kGradCheckThreshold;
      char line[128];
      std::snprintf(line, sizeof(line), "%-26s %.3e %s", r.name.c_str(), r.max_rel_error, ok ? "ok" : "FAIL");
      out << line << "\n";
      if (!ok) failed.push_back(r.name);
    }
    if (failed.empty()) {
      out << "all " << results.size() << " checks below " << kGradCheckThreshold << "\n";
      return kExitOk;
    }
    std::string names;
    for (const auto& n : failed) names += (names.empty() ? "" : ", ") + n;
    err << "gradcheck: relative error above " << kGradCheckThreshold << " in: " << names << "\n";
    return kExitCheckFailed;
  });
}

int cmd_debug_matches(const Options& opts, std::ostream& out, std::ostream& err) {
  return guarded("debug-matches", err, [&] {
    LoadedModels m = load_models(opts, true);
    const synth::Dataset ds = dataset_for(opts, m.cfg);
    const int top_K = top_k_flag(opts);
    const auto g_idx = ds.indices(synth::Split::kGallery);
    std::vector<retrieval::Embedded> gallery;
    std::vector<std::uint64_t> ids;
    Matrix pooled(static_cast<Index>(g_idx.size()), m.cfg.encoder.channels);
    for (std::size_t g = 0; g < g_idx.size(); ++g) {
      gallery.push_back(retrieval::embed(m.encoder, ds.samples[g_idx[g]]));
      pooled.row(static_cast<Index>(g)) = gallery.back().pooled;
      ids.push_back(g_idx[g]);
    }

    auto pairs_json = [](const std::vector<qa::IndexPair>& v) {
      auto a = Json::array();
      for (const auto& [p, q] : v) a.push_back({p, q});
      return a;
    };
    auto dump = Json::array();
    for (std::size_t qi : ds.indices(synth::Split::kQuery)) {
      const auto query = retrieval::embed(m.encoder, ds.samples[qi]);
      const auto coarse = retrieval::coarse_rank(query.pooled, pooled, ids);
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(top_K), coarse.size());
      for (std::size_t c = 0; c < n; ++c) {
        const std::size_t gi = g_idx[coarse[c].gallery];
        const qa::QaResult r = qa::score_pair(*m.matcher, gallery[coarse[c].gallery].patches, query.patches);
        std::vector<double> s_hat(r.s_hat.value().data(), r.s_hat.value().data() + r.s_hat.size());
        dump.push_back({{"query", qi},
                        {"gallery", gi},
                        {"same_identity", ds.samples[gi].identity == ds.samples[qi].identity},
                        {"mutual", pairs_json(r.matches.mutual)},
                        {"complementary", pairs_json(r.matches.complementary)},
                        {"S_hat", s_hat},
                        {"psi", r.psi.item()}});
      }
    }
    emit(dump, opts, out);
    return kExitOk;
  });
}

}  // namespace bit::cli
