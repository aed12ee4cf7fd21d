#include "bit/cli/checkpoint.hpp"

#include "bit/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bit::cli {

namespace {

static_assert(sizeof(double) == 8);

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

void put_f64(std::string& out, double d) {
  auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_f64(const std::string& in, std::size_t at) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void Checkpoint::add(const nn::ParameterSet& set) {
  for (const auto& s : set.slots()) {
    if (has(s.name)) throw UsageError("checkpoint already holds parameter '" + s.name + "'");
    params.push_back({s.name, s.value.value()});
  }
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& e : params)
    if (e.name == name) return true;
  return false;
}

void Checkpoint::restore(nn::ParameterSet& set) const {
  for (auto& s : set.slots()) {
    const Entry* found = nullptr;
    for (const auto& e : params)
      if (e.name == s.name) found = &e;
    if (found == nullptr) throw UsageError("checkpoint has no parameter '" + s.name + "'");
    if (found->value.rows() != s.value.rows() || found->value.cols() != s.value.cols()) {
      throw DimensionError("checkpoint parameter '" + s.name + "' has shape " + std::to_string(found->value.rows()) +
                           "x" + std::to_string(found->value.cols()) + ", model expects " +
                           std::to_string(s.value.rows()) + "x" + std::to_string(s.value.cols()));
    }
    s.value.mutable_value() = found->value;
  }
}

std::string encode_checkpoint(const Checkpoint& ck) {
  nlohmann::json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["stage"] = ck.stage;
  manifest["config"] = to_json(ck.config);
  auto entries = nlohmann::json::array();
  for (const auto& e : ck.params) entries.push_back({{"name", e.name}, {"rows", e.value.rows()}, {"cols", e.value.cols()}});
  manifest["params"] = std::move(entries);
  const std::string text = manifest.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& e : ck.params)
    for (Index i = 0; i < e.value.size(); ++i) put_f64(out, e.value.data()[i]);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  constexpr std::size_t header = sizeof(kCheckpointMagic) + 4;
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw VersionError("not a checkpoint: missing BITCKPT1 magic");
  }
  if (bytes.size() < header) throw ParseError("checkpoint truncated in header", bytes.size());
  const std::size_t len = get_u32(bytes, sizeof(kCheckpointMagic));
  if (bytes.size() - header < len) throw ParseError("checkpoint truncated in manifest", bytes.size());

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + header, bytes.begin() + static_cast<std::ptrdiff_t>(header + len));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint manifest is not valid JSON: ") + e.what(), header + e.byte);
  }

  Checkpoint ck;
  std::size_t at = header + len;
  try {
    const int version = manifest.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw VersionError("unsupported checkpoint version " + std::to_string(version));
    }
    ck.stage = manifest.at("stage").get<int>();
    if (ck.stage != 1 && ck.stage != 2) throw ParseError("checkpoint stage must be 1 or 2", header);
    try {
      ck.config = run_config_from_json(manifest.at("config"));
    } catch (const ConfigError& e) {
      throw ParseError(std::string("checkpoint config: ") + e.what(), header);
    }
    for (const auto& p : manifest.at("params")) {
      auto name = p.at("name").get<std::string>();
      const auto rows = p.at("rows").get<Index>();
      const auto cols = p.at("cols").get<Index>();
      if (rows < 0 || cols < 0) throw ParseError("parameter '" + name + "' has a negative extent", header);
      const auto count = static_cast<std::size_t>(rows * cols);
      if ((bytes.size() - at) / 8 < count) {
        throw ParseError("checkpoint data ends inside parameter '" + name + "'", bytes.size());
      }
      Matrix m(rows, cols);
      for (std::size_t i = 0; i < count; ++i, at += 8) m.data()[i] = get_f64(bytes, at);
      ck.params.push_back({std::move(name), std::move(m)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint manifest: ") + e.what(), header);
  }
  if (at != bytes.size()) throw ParseError("trailing bytes after checkpoint data", at);
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UsageError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace bit::cli
