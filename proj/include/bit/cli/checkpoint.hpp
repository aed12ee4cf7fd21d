#pragma once

#include "bit/cli/config.hpp"
#include "bit/nn/parameters.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace bit::cli {

inline constexpr char kCheckpointMagic[8] = {'B', 'I', 'T', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

/// Stage marker, run configuration and named parameter values.
///
/// On disk: the 8-byte magic "BITCKPT1", a 4-byte little-endian manifest
/// length, the UTF-8 JSON manifest, then each parameter as little-endian f64
/// in manifest order.
struct Checkpoint {
  int stage = 1;
  RunConfig config;
  struct Entry {
    std::string name;
    Matrix value;
    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> params;

  bool operator==(const Checkpoint&) const = default;

  void add(const nn::ParameterSet& set);
  bool has(const std::string& name) const;
  /// Copies stored values into every slot of `set`; names and shapes must match.
  void restore(nn::ParameterSet& set) const;
};

std::string encode_checkpoint(const Checkpoint& ck);
/// Throws VersionError on a wrong magic or version and ParseError on any
/// inconsistency; never returns a partial checkpoint.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bit::cli
