#include "bit/cli/config.hpp"

#include "bit/errors.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace bit::cli {

namespace {

using Json = nlohmann::json;
using Handlers = std::map<std::string, std::function<void(const Json&)>>;

void read_object(const Json& doc, const std::string& where, const Handlers& handlers) {
  if (!doc.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, value] : doc.items()) {
    auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const Json::exception& e) {
      throw ConfigError(where + "." + key + ": " + e.what());
    }
  }
}

template <typename T>
std::function<void(const Json&)> into(T& field) {
  return [&field](const Json& v) { field = v.get<T>(); };
}

Json optim_json(const StageOptim& o) {
  Json j = {{"lr", o.lr},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"eps", o.eps},
            {"weight_decay", o.weight_decay}};
  if (o.min_lr) j["min_lr"] = *o.min_lr;
  return j;
}

StageOptim optim_from_json(const Json& doc, const std::string& where) {
  StageOptim o;
  read_object(doc, where,
              {{"lr", into(o.lr)},
               {"beta1", into(o.beta1)},
               {"beta2", into(o.beta2)},
               {"eps", into(o.eps)},
               {"weight_decay", into(o.weight_decay)},
               {"min_lr", [&o](const Json& v) { o.min_lr = v.get<double>(); }}});
  return o;
}

}  // namespace

nn::OptimizerConfig StageOptim::resolve(std::int64_t total_steps) const {
  nn::OptimizerConfig c;
  c.lr = lr;
  c.beta1 = beta1;
  c.beta2 = beta2;
  c.eps = eps;
  c.weight_decay = weight_decay;
  c.min_lr = min_lr.value_or(lr / 100.0);
  c.total_steps = total_steps;
  return c;
}

void RunConfig::validate() const {
  gen.validate();
  encoder.validate();
  bci.validate();
  qa.validate(gen.patches);
  stage1_optim.resolve(1).validate();
  stage2_optim.resolve(1).validate();
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("run config: " + msg);
  };
  require(stage1_epochs >= 1 && stage2_epochs >= 1, "stage epochs must be at least 1");
  require(batch.P >= 2, "batch.P must be at least 2 (the triplet loss needs negatives)");
  require(batch.K >= 1, "batch.K must be at least 1");
  require(encoder.raw_dim == gen.raw_dim, "encoder.raw_dim must equal gen.raw_dim");
  require(encoder.patches == gen.patches, "encoder.patches must equal gen.patches");
  require(bci.channels == encoder.channels, "bci.C must equal encoder.channels");
  require(encoder.num_train_identities == gen.num_train_identities(),
          "encoder.num_train_identities must equal the number of training identities");
}

Json to_json(const RunConfig& c) {
  return {{"gen", synth::to_json(c.gen)},
          {"encoder",
           {{"raw_dim", c.encoder.raw_dim},
            {"patches", c.encoder.patches},
            {"channels", c.encoder.channels},
            {"self_attn_depth", c.encoder.self_attn_depth},
            {"heads", c.encoder.heads},
            {"num_train_identities", c.encoder.num_train_identities}}},
          {"bci", {{"T", c.bci.T}, {"C", c.bci.channels}, {"heads", c.bci.heads}}},
          {"qa", {{"k", c.qa.k}, {"alpha", c.qa.alpha}, {"lambda", c.qa.lambda}}},
          {"optim", {{"stage1", optim_json(c.stage1_optim)}, {"stage2", optim_json(c.stage2_optim)}}},
          {"stage1_epochs", c.stage1_epochs},
          {"stage2_epochs", c.stage2_epochs},
          {"batch", {{"P", c.batch.P}, {"K", c.batch.K}}},
          {"seed", c.seed}};
}

RunConfig run_config_from_json(const Json& doc) {
  RunConfig c;
  std::optional<Json> encoder_doc, bci_doc;
  read_object(doc, "config",
              {{"gen", [&](const Json& v) { c.gen = synth::gen_config_from_json(v); }},
               {"encoder", [&](const Json& v) { encoder_doc = v; }},
               {"bci", [&](const Json& v) { bci_doc = v; }},
               {"qa",
                [&](const Json& v) {
                  read_object(v, "qa", {{"k", into(c.qa.k)}, {"alpha", into(c.qa.alpha)}, {"lambda", into(c.qa.lambda)}});
                }},
               {"optim",
                [&](const Json& v) {
                  read_object(v, "optim",
                              {{"stage1", [&](const Json& s) { c.stage1_optim = optim_from_json(s, "optim.stage1"); }},
                               {"stage2", [&](const Json& s) { c.stage2_optim = optim_from_json(s, "optim.stage2"); }}});
                }},
               {"stage1_epochs", into(c.stage1_epochs)},
               {"stage2_epochs", into(c.stage2_epochs)},
               {"batch", [&](const Json& v) { read_object(v, "batch", {{"P", into(c.batch.P)}, {"K", into(c.batch.K)}}); }},
               {"seed", into(c.seed)}});

  // Encoder extents follow the dataset unless stated.
  c.encoder.raw_dim = c.gen.raw_dim;
  c.encoder.patches = c.gen.patches;
  c.encoder.num_train_identities = c.gen.num_train_identities();
  bool channels_set = false;
  if (encoder_doc) {
    read_object(*encoder_doc, "encoder",
                {{"raw_dim", into(c.encoder.raw_dim)},
                 {"patches", into(c.encoder.patches)},
                 {"channels", [&](const Json& v) { c.encoder.channels = v.get<int>(); channels_set = true; }},
                 {"self_attn_depth", into(c.encoder.self_attn_depth)},
                 {"heads", into(c.encoder.heads)},
                 {"num_train_identities", into(c.encoder.num_train_identities)}});
  }
  c.bci.channels = c.encoder.channels;
  if (bci_doc) {
    read_object(*bci_doc, "bci", {{"T", into(c.bci.T)}, {"C", into(c.bci.channels)}, {"heads", into(c.bci.heads)}});
    if (!channels_set && bci_doc->contains("C")) c.encoder.channels = c.bci.channels;
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Json doc;
  try {
    doc = Json::parse(buf.str());
  } catch (const Json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(doc);
}

std::optional<std::uint64_t> seed_from_env() {
  const char* raw = std::getenv("BIT_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (errno != 0 || end == raw || *end != '\0' || raw[0] == '-') {
    throw ConfigError(std::string("BIT_SEED must be an unsigned 64-bit integer, got '") + raw + "'");
  }
  return static_cast<std::uint64_t>(v);
}

}  // namespace bit::cli
