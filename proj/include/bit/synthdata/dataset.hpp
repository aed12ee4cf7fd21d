#pragma once

#include "bit/diffcore/tensor.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace bit::synth {

enum class Modality { kVisible, kInfrared };
enum class Split { kTrain, kQuery, kGallery, kHoldout };

std::string_view to_string(Modality m);
std::string_view to_string(Split s);
Modality parse_modality(std::string_view s);
Split parse_split(std::string_view s);

/// Generator settings. The defaults are the desk-scale configuration.
struct GenConfig {
  int num_identities = 50;
  /// The last `num_test_identities` identities form the test split.
  int num_test_identities = 10;
  int vis_per_id = 8;
  int ir_per_id = 4;
  int patches = 8;
  int raw_dim = 16;
  double noise_sigma = 0.1;
  int collision_groups = 10;
  /// Blend between the visible and an independent infrared mixing of the
  /// structure coordinates; 0 makes both modalities see structure identically.
  double modality_gap = 0.6;
  std::uint64_t seed = 0;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
  int appearance_dim() const { return raw_dim / 2; }
  int structure_dim() const { return raw_dim - appearance_dim(); }
  int num_train_identities() const { return num_identities - num_test_identities; }
  /// Collision group of an identity: contiguous blocks of near-equal size.
  int group_of(int identity) const;

  bool operator==(const GenConfig&) const = default;
};

struct SynthSample {
  int identity = 0;
  Modality modality = Modality::kVisible;
  Split split = Split::kTrain;
  int camera = 0;
  Matrix patches;  ///< N x raw_dim

  bool operator==(const SynthSample&) const = default;
};

struct Dataset {
  GenConfig config;
  std::vector<SynthSample> samples;

  bool operator==(const Dataset&) const = default;

  std::size_t count(Split split, Modality modality) const;
  std::vector<std::size_t> indices(Split split) const;
  std::vector<std::size_t> indices(Split split, Modality modality) const;
  /// Identities that occur in the training split, ascending.
  std::vector<int> train_identities() const;
};

/// Builds a dataset as a pure function of `cfg` (including its seed).
Dataset generate(const GenConfig& cfg);

/// Removes floor(fraction * count) training samples of `modality`, chosen
/// uniformly at random from `seed`, never taking an identity's last sample of
/// that modality. Test splits are untouched.
Dataset reduce_modality(const Dataset& ds, Modality modality, double fraction, std::uint64_t seed);

/// An identity-balanced batch: P identities, K visible and K infrared samples each.
///
/// Indices refer to `Dataset::samples`; both lists are identity-major and the
/// i-th visible and i-th infrared entries share an identity.
struct PkBatch {
  std::vector<std::size_t> visible;
  std::vector<std::size_t> infrared;

  std::size_t size() const { return visible.size() + infrared.size(); }
};

/// Deterministic in (seed, step). Samples with replacement when an identity
/// has fewer than K samples of a modality.
PkBatch sample_pk_batch(const Dataset& ds, int P, int K, std::uint64_t seed, std::int64_t step);

/// "bit-synth-v1" JSON document.
nlohmann::json to_json(const Dataset& ds);
Dataset dataset_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const GenConfig& cfg);
/// Unknown keys are rejected; missing keys keep their defaults.
GenConfig gen_config_from_json(const nlohmann::json& doc);

void save(const Dataset& ds, const std::filesystem::path& path);
/// Throws ParseError (with byte offset) on malformed input and VersionError on
/// an unknown format tag.
Dataset load(const std::filesystem::path& path);
Dataset parse_dataset(std::string_view text);

/// splitmix64 finalizer; used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace bit::synth
