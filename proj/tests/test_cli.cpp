#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bit/cli/checkpoint.hpp"
#include "bit/cli/commands.hpp"
#include "bit/cli/config.hpp"
#include "bit/cli/pipeline.hpp"
#include "bit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

using namespace bit;
using namespace bit::cli;
namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct ScratchDir {
  fs::path path = fs::temp_directory_path() / ("bit_cli_test_" + std::to_string(::getpid()));
  ScratchDir() { fs::create_directories(path); }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

fs::path scratch() {
  static const ScratchDir dir;
  return dir.path;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// Small enough to train both stages in a few seconds.
Json tiny_config() {
  return {{"gen", {{"num_identities", 8}, {"num_test_identities", 3}, {"collision_groups", 2},
                   {"vis_per_id", 4}, {"ir_per_id", 2}, {"seed", 5}}},
          {"encoder", {{"channels", 8}, {"self_attn_depth", 1}}},
          {"bci", {{"T", 1}}},
          {"stage1_epochs", 2},
          {"stage2_epochs", 2},
          {"batch", {{"P", 2}, {"K", 2}}},
          {"seed", 3}};
}

fs::path tiny_config_file() {
  fs::path p = scratch() / "tiny.json";
  write(p, tiny_config().dump());
  return p;
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

template <typename F>
Run run(F cmd, const Options& o) {
  std::ostringstream out, err;
  int code = cmd(o, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("run config parsing") {
  RunConfig def = run_config_from_json(Json::object());
  CHECK(def == RunConfig{});
  CHECK(def.bci.T == 3);
  CHECK(def.qa.k == 3);
  CHECK(def.qa.alpha == 0.2);
  CHECK(def.qa.lambda == 0.6);
  CHECK(def.stage1_optim.lr == 3e-4);
  CHECK(def.stage1_epochs == 8);
  CHECK(def.stage2_epochs == 12);
  CHECK(def.stage2_optim.resolve(100).min_lr == doctest::Approx(3e-6));

  RunConfig tiny = run_config_from_json(tiny_config());
  CHECK(tiny.encoder.num_train_identities == 5);
  CHECK(tiny.bci.channels == 8);
  CHECK(run_config_from_json(to_json(tiny)) == tiny);

  Json typo = tiny_config();
  typo["qa"] = {{"alpah", 0.3}};
  CHECK_THROWS_AS(run_config_from_json(typo), ConfigError);
  Json top = tiny_config();
  top["epochs"] = 3;
  CHECK_THROWS_AS(run_config_from_json(top), ConfigError);
  Json nested = tiny_config();
  nested["optim"] = {{"stage2", {{"learning_rate", 1e-3}}}};
  CHECK_THROWS_AS(run_config_from_json(nested), ConfigError);

  Json mismatch = tiny_config();
  mismatch["bci"] = {{"T", 1}, {"C", 16}};
  mismatch["encoder"]["channels"] = 8;
  CHECK_THROWS_AS(run_config_from_json(mismatch), ConfigError);
  Json zero_epochs = tiny_config();
  zero_epochs["stage2_epochs"] = 0;
  CHECK_THROWS_AS(run_config_from_json(zero_epochs), ConfigError);
  Json bad_type = tiny_config();
  bad_type["seed"] = "three";
  CHECK_THROWS_AS(run_config_from_json(bad_type), ConfigError);
}

TEST_CASE("BIT_SEED") {
  ::unsetenv("BIT_SEED");
  CHECK_FALSE(seed_from_env().has_value());
  ::setenv("BIT_SEED", "18446744073709551615", 1);
  CHECK(seed_from_env() == 18446744073709551615ULL);
  ::setenv("BIT_SEED", "12x", 1);
  CHECK_THROWS_AS(seed_from_env(), ConfigError);
  ::setenv("BIT_SEED", "-1", 1);
  CHECK_THROWS_AS(seed_from_env(), ConfigError);
  ::unsetenv("BIT_SEED");
}

TEST_CASE("checkpoint encoding") {
  RunConfig cfg = run_config_from_json(tiny_config());
  encoder::EncoderModel enc = make_encoder(cfg);
  Checkpoint ck;
  ck.stage = 1;
  ck.config = cfg;
  ck.add(enc.params());
  // Values that only survive an exact binary round trip.
  ck.params.front().value(0, 0) = 0.1 + 0.2;
  ck.params.front().value(0, 1) = -0.0;
  ck.params.front().value(0, 2) = 5e-324;

  const std::string bytes = encode_checkpoint(ck);
  CHECK(bytes.substr(0, 8) == "BITCKPT1");
  Checkpoint back = decode_checkpoint(bytes);
  CHECK(back == ck);
  CHECK(std::signbit(back.params.front().value(0, 1)));
  CHECK(encode_checkpoint(back) == bytes);

  fs::path file = scratch() / "ck.bin";
  save_checkpoint(ck, file);
  CHECK(slurp(file) == bytes);
  CHECK(load_checkpoint(file) == ck);

  encoder::EncoderModel other(cfg.encoder, 999);
  back.restore(other.params());
  for (std::size_t i = 0; i < other.params().size(); ++i)
    CHECK(other.params().slots()[i].value.value() == ck.params[i].value);

  std::string bad_magic = bytes;
  bad_magic[3] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), VersionError);
  CHECK_THROWS_AS(decode_checkpoint("BIT"), VersionError);

  // Rewrite the manifest with another version and a matching length field.
  const std::uint32_t len = static_cast<unsigned char>(bytes[8]) | (static_cast<unsigned char>(bytes[9]) << 8) |
                            (static_cast<unsigned char>(bytes[10]) << 16) |
                            (static_cast<unsigned char>(bytes[11]) << 24);
  Json manifest = Json::parse(bytes.substr(12, len));
  manifest["version"] = 2;
  const std::string text = manifest.dump();
  std::string v2 = bytes.substr(0, 8);
  for (int i = 0; i < 4; ++i) v2.push_back(static_cast<char>((text.size() >> (8 * i)) & 0xFF));
  v2 += text + bytes.substr(12 + len);
  CHECK_THROWS_AS(decode_checkpoint(v2), VersionError);

  const std::string last = ck.params.back().name;
  try {
    decode_checkpoint(bytes.substr(0, bytes.size() - 8));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(last) != std::string::npos);
  }
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), ParseError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 20)), ParseError);

  encoder::EncoderConfig wide = cfg.encoder;
  wide.channels = 16;
  encoder::EncoderModel mismatched(wide, 1);
  CHECK_THROWS_AS(ck.restore(mismatched.params()), DimensionError);
}

TEST_CASE("gen-data") {
  Options o;
  o.out = scratch() / "d1.json";
  Run r = run(cmd_gen_data, o);
  REQUIRE(r.code == kExitOk);
  Json summary = Json::parse(r.out);
  CHECK(summary["identities"] == 50);
  CHECK(summary["vis_ir_ratio"] == 2.0);

  Options o2 = o;
  o2.out = scratch() / "d2.json";
  REQUIRE(run(cmd_gen_data, o2).code == kExitOk);
  CHECK(slurp(*o.out) == slurp(*o2.out));

  o2.seed = 77;
  REQUIRE(run(cmd_gen_data, o2).code == kExitOk);
  CHECK(slurp(*o.out) != slurp(*o2.out));

  fs::path bad = scratch() / "bad.json";
  write(bad, R"({"gen": {"num_identities": 0}})");
  Options o3;
  o3.config = bad;
  o3.out = scratch() / "d3.json";
  CHECK(run(cmd_gen_data, o3).code == kExitUsage);
  write(bad, "{not json");
  CHECK(run(cmd_gen_data, o3).code == kExitUsage);
  Options o4;
  CHECK(run(cmd_gen_data, o4).code == kExitUsage);
}

TEST_CASE("train, eval and debug-matches") {
  const fs::path cfg = tiny_config_file();
  const fs::path data = scratch() / "tiny_data.json";
  {
    Options g;
    g.config = cfg;
    g.out = data;
    REQUIRE(run(cmd_gen_data, g).code == kExitOk);
  }

  Options s1;
  s1.config = cfg;
  s1.data = data;
  s1.out = scratch() / "s1.ckpt";
  Run r1 = run(cmd_train, s1);
  REQUIRE(r1.code == kExitOk);

  Options s2 = s1;
  s2.stage = 2;
  s2.checkpoint.reset();
  s2.out = scratch() / "s2.ckpt";
  Run missing = run(cmd_train, s2);
  CHECK(missing.code == kExitUsage);
  CHECK(missing.err.find("--checkpoint") != std::string::npos);

  s2.checkpoint = s1.out;
  REQUIRE(run(cmd_train, s2).code == kExitOk);

  SUBCASE("one log line per epoch") {
    for (const auto& [ck, stage] : {std::pair{*s1.out, 1}, std::pair{*s2.out, 2}}) {
      std::ifstream log(metrics_log_path(ck));
      std::string line;
      int n = 0;
      while (std::getline(log, line)) {
        Json j = Json::parse(line);
        CHECK(j["stage"] == stage);
        CHECK(j["epoch"] == ++n);
        CHECK(std::isfinite(j["loss"].get<double>()));
      }
      CHECK(n == 2);
    }
  }

  SUBCASE("stage 2 leaves the backbone bytes untouched") {
    Checkpoint a = load_checkpoint(*s1.out), b = load_checkpoint(*s2.out);
    CHECK(b.stage == 2);
    for (const auto& e : a.params) {
      bool found = false;
      for (const auto& f : b.params) {
        if (f.name != e.name) continue;
        found = true;
        CHECK(std::memcmp(f.value.data(), e.value.data(), sizeof(double) * static_cast<std::size_t>(e.value.size())) == 0);
      }
      CHECK(found);
    }
  }

  SUBCASE("reruns are byte-identical") {
    Options again1 = s1, again2 = s2;
    again1.out = scratch() / "s1b.ckpt";
    again2.out = scratch() / "s2b.ckpt";
    again2.checkpoint = again1.out;
    REQUIRE(run(cmd_train, again1).code == kExitOk);
    REQUIRE(run(cmd_train, again2).code == kExitOk);
    CHECK(slurp(*again1.out) == slurp(*s1.out));
    CHECK(slurp(*again2.out) == slurp(*s2.out));
    CHECK(slurp(metrics_log_path(*again2.out)) == slurp(metrics_log_path(*s2.out)));

    Options seeded = s1;
    seeded.out = scratch() / "s1c.ckpt";
    seeded.seed = 4;
    REQUIRE(run(cmd_train, seeded).code == kExitOk);
    CHECK(slurp(*seeded.out) != slurp(*s1.out));
    ::setenv("BIT_SEED", "4", 1);
    Options env_seeded = s1;
    env_seeded.out = scratch() / "s1d.ckpt";
    Run e = run(cmd_train, env_seeded);
    ::unsetenv("BIT_SEED");
    REQUIRE(e.code == kExitOk);
    CHECK(slurp(*env_seeded.out) == slurp(*seeded.out));
  }

  SUBCASE("eval reports") {
    Options ev;
    ev.data = data;
    ev.checkpoint = s2.out;
    Run a = run(cmd_eval, ev);
    REQUIRE(a.code == kExitOk);
    Json rep = Json::parse(a.out);
    CHECK(rep["psi_evals_per_query"] == 3);
    CHECK(rep["top_K"] == 50);
    CHECK(rep["num_queries"] == 6);

    ev.top_K = 2;
    CHECK(Json::parse(run(cmd_eval, ev).out)["psi_evals_per_query"] == 2);

    // top-K equal to the gallery size is the exhaustive Psi ranking.
    ev.top_K = 3;
    CHECK(Json::parse(run(cmd_eval, ev).out)["mAP"] == rep["mAP"]);

    Options base;
    base.data = data;
    base.checkpoint = s1.out;
    base.baseline = true;
    Run b1 = run(cmd_eval, base), b2 = run(cmd_eval, base);
    REQUIRE(b1.code == kExitOk);
    CHECK(b1.out == b2.out);
    CHECK(Json::parse(b1.out)["psi_evals_per_query"] == 0);

    base.baseline = false;
    CHECK(run(cmd_eval, base).code == kExitUsage);
    Options none;
    none.data = data;
    CHECK(run(cmd_eval, none).code == kExitUsage);
    none.checkpoint = scratch() / "does_not_exist.ckpt";
    CHECK(run(cmd_eval, none).code == kExitUsage);

    ev.out = scratch() / "report.json";
    REQUIRE(run(cmd_eval, ev).code == kExitOk);
    CHECK(Json::parse(slurp(*ev.out))["psi_evals_per_query"] == 3);
  }

  SUBCASE("debug-matches") {
    Options d;
    d.data = data;
    d.checkpoint = s2.out;
    d.top_K = 2;
    Run r = run(cmd_debug_matches, d);
    REQUIRE(r.code == kExitOk);
    Json dump = Json::parse(r.out);
    CHECK(dump.size() == 6 * 2);
    for (const auto& row : dump) {
      CHECK(row["S_hat"].size() == 8);
      const double psi = row["psi"];
      CHECK(psi > 0.0);
      CHECK(psi < 1.0);
      std::vector<bool> covered(8, false);
      for (const auto& m : row["mutual"]) covered[m[0].get<std::size_t>()] = true;
      for (const auto& m : row["complementary"]) covered[m[0].get<std::size_t>()] = true;
      CHECK(std::count(covered.begin(), covered.end(), true) == 8);
    }
  }
}

TEST_CASE("imbalance") {
  Options o;
  o.config = tiny_config_file();
  o.fractions = {0.0, 0.5};
  Run r = run(cmd_imbalance, o);
  REQUIRE(r.code == kExitOk);
  Json rows = Json::parse(r.out)["rows"];
  REQUIRE(rows.size() == 4);
  for (const auto& row : rows)
    for (const char* key : {"setting", "model", "Rank-1", "mAP"}) CHECK(row.contains(key));
  CHECK(rows[0]["model"] == "BIT");
  CHECK(rows[1]["model"] == "baseline");

  // The untouched setting matches a direct train + eval.
  RunConfig cfg = load_run_config(*o.config);
  const auto ds = synth::generate(cfg.gen);
  const TrainedRun full = train_full(ds, cfg);
  const auto bit = retrieval::evaluate(full.encoder, full.matcher.get(), ds, {50, true});
  CHECK(rows[0]["Rank-1"] == bit.rank1());
  CHECK(rows[0]["mAP"] == bit.metrics.mAP);

  o.modality = "uv";
  CHECK(run(cmd_imbalance, o).code == kExitUsage);
  o.modality = "ir";
  o.fractions = {1.0};
  CHECK(run(cmd_imbalance, o).code == kExitUsage);
}

TEST_CASE("gradcheck") {
  Options o;
  Run ok = run(cmd_gradcheck, o);
  CHECK(ok.code == kExitOk);
  int lines = 0;
  std::istringstream in(ok.out);
  for (std::string line; std::getline(in, line);) lines += line.find(" ok") != std::string::npos ? 1 : 0;
  CHECK(lines >= 30);

  o.corrupt_op = "softmax_rows";
  Run bad = run(cmd_gradcheck, o);
  CHECK(bad.code == kExitCheckFailed);
  CHECK(bad.err.find("softmax_rows") != std::string::npos);

  // The hook is cleared afterwards.
  o.corrupt_op.clear();
  CHECK(run(cmd_gradcheck, o).code == kExitOk);
}
