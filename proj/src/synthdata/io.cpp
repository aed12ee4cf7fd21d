#include "bit/errors.hpp"
#include "bit/synthdata/dataset.hpp"

#include <fstream>
#include <sstream>

namespace bit::synth {

namespace {

constexpr std::string_view kFormat = "bit-synth-v1";

nlohmann::json matrix_to_json(const Matrix& m) {
  auto rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j, Index rows, Index cols) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows) {
    throw UsageError("expected " + std::to_string(rows) + " patch rows");
  }
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw UsageError("expected " + std::to_string(cols) + " values per patch");
    }
    for (Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace

nlohmann::json to_json(const GenConfig& cfg) {
  return {{"num_identities", cfg.num_identities},
          {"num_test_identities", cfg.num_test_identities},
          {"vis_per_id", cfg.vis_per_id},
          {"ir_per_id", cfg.ir_per_id},
          {"patches", cfg.patches},
          {"raw_dim", cfg.raw_dim},
          {"noise_sigma", cfg.noise_sigma},
          {"collision_groups", cfg.collision_groups},
          {"modality_gap", cfg.modality_gap},
          {"seed", cfg.seed}};
}

GenConfig gen_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("gen config must be a JSON object");
  GenConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    try {
      if (key == "num_identities") cfg.num_identities = value.get<int>();
      else if (key == "num_test_identities") cfg.num_test_identities = value.get<int>();
      else if (key == "vis_per_id") cfg.vis_per_id = value.get<int>();
      else if (key == "ir_per_id") cfg.ir_per_id = value.get<int>();
      else if (key == "patches") cfg.patches = value.get<int>();
      else if (key == "raw_dim") cfg.raw_dim = value.get<int>();
      else if (key == "noise_sigma") cfg.noise_sigma = value.get<double>();
      else if (key == "collision_groups") cfg.collision_groups = value.get<int>();
      else if (key == "modality_gap") cfg.modality_gap = value.get<double>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else throw ConfigError("gen config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("gen config: bad value for '" + key + "': " + e.what());
    }
  }
  return cfg;
}

nlohmann::json to_json(const Dataset& ds) {
  auto samples = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    samples.push_back({{"id", s.identity},
                       {"modality", to_string(s.modality)},
                       {"split", to_string(s.split)},
                       {"camera", s.camera},
                       {"patches", matrix_to_json(s.patches)}});
  }
  return {{"format", kFormat}, {"config", to_json(ds.config)}, {"samples", std::move(samples)}};
}

Dataset dataset_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("format") || !doc["format"].is_string()) {
    throw ParseError("dataset: missing format tag", 0);
  }
  const auto format = doc["format"].get<std::string>();
  if (format != kFormat) {
    throw VersionError("dataset: unsupported format '" + format + "' (expected " +
                       std::string(kFormat) + ")");
  }
  Dataset ds;
  try {
    ds.config = gen_config_from_json(doc.at("config"));
    ds.config.validate();
  } catch (const Error& e) {
    throw ParseError(std::string("dataset: invalid config: ") + e.what(), 0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dataset: invalid config: ") + e.what(), 0);
  }

  const auto& samples = doc.contains("samples") ? doc["samples"] : nlohmann::json();
  if (!samples.is_array()) throw ParseError("dataset: missing samples array", 0);
  ds.samples.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    try {
      const auto& j = samples[i];
      SynthSample s;
      s.identity = j.at("id").get<int>();
      s.modality = parse_modality(j.at("modality").get<std::string>());
      s.split = parse_split(j.at("split").get<std::string>());
      s.camera = j.at("camera").get<int>();
      s.patches = matrix_from_json(j.at("patches"), ds.config.patches, ds.config.raw_dim);
      if (s.identity < 0 || s.identity >= ds.config.num_identities) {
        throw UsageError("identity out of range");
      }
      ds.samples.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw ParseError("dataset: sample " + std::to_string(i) + ": " + e.what(), 0);
    }
  }
  return ds;
}

Dataset parse_dataset(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("dataset: malformed JSON: ") + e.what(), e.byte);
  }
  return dataset_from_json(doc);
}

void save(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot open '" + path.string() + "' for writing");
  out << to_json(ds).dump() << '\n';
  if (!out) throw UsageError("failed writing '" + path.string() + "'");
}

Dataset load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

}  // namespace bit::synth
