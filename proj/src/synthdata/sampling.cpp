#include "bit/errors.hpp"
#include "bit/synthdata/dataset.hpp"
#include "bit/synthdata/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace bit::synth {

namespace {

// In-place Fisher-Yates over the first `k` positions.
template <typename T>
void partial_shuffle(std::vector<T>& v, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k && i + 1 < v.size(); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(v.size() - i));
    std::swap(v[i], v[j]);
  }
}

}  // namespace

Dataset reduce_modality(const Dataset& ds, Modality modality, double fraction,
                        std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw ConfigError("reduce_modality: fraction must lie in [0, 1)");
  }
  std::vector<std::size_t> candidates = ds.indices(Split::kTrain, modality);
  const auto target = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(candidates.size())));
  if (target == 0) return ds;

  std::map<int, std::size_t> remaining;
  for (std::size_t i : candidates) ++remaining[ds.samples[i].identity];

  Rng rng(mix_seed(seed, 0x1D));
  partial_shuffle(candidates, candidates.size(), rng);
  std::vector<bool> drop(ds.samples.size(), false);
  std::size_t removed = 0;
  // Walk a random order; skip any removal that would empty an identity.
  for (std::size_t i : candidates) {
    if (removed == target) break;
    auto& left = remaining[ds.samples[i].identity];
    if (left <= 1) continue;
    --left;
    drop[i] = true;
    ++removed;
  }
  if (removed < target) {
    throw ConfigError("reduce_modality: cannot remove " + std::to_string(target) + " " +
                      std::string(to_string(modality)) +
                      " samples while keeping one per identity");
  }

  Dataset out;
  out.config = ds.config;
  out.samples.reserve(ds.samples.size() - removed);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (!drop[i]) out.samples.push_back(ds.samples[i]);
  }
  return out;
}

PkBatch sample_pk_batch(const Dataset& ds, int P, int K, std::uint64_t seed, std::int64_t step) {
  if (P < 1 || K < 1) throw UsageError("sample_pk_batch: P and K must be positive");
  std::map<int, std::vector<std::size_t>> vis, ir;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    if (s.split != Split::kTrain) continue;
    (s.modality == Modality::kVisible ? vis : ir)[s.identity].push_back(i);
  }
  if (vis.empty() && ir.empty()) throw UsageError("sample_pk_batch: the train split is empty");

  std::vector<int> ids;
  for (const auto& [id, list] : vis) {
    if (ir.contains(id)) ids.push_back(id);
  }
  if (ids.size() < static_cast<std::size_t>(P)) {
    throw UsageError("sample_pk_batch: need " + std::to_string(P) +
                     " identities with both modalities, have " + std::to_string(ids.size()));
  }

  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(step)));
  partial_shuffle(ids, static_cast<std::size_t>(P), rng);
  ids.resize(static_cast<std::size_t>(P));

  auto draw = [&](std::vector<std::size_t> pool, std::vector<std::size_t>& out) {
    const auto k = static_cast<std::size_t>(K);
    if (pool.size() >= k) {
      partial_shuffle(pool, k, rng);
      out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    } else {
      for (std::size_t j = 0; j < k; ++j) out.push_back(pool[rng.below(pool.size())]);
    }
  };

  PkBatch batch;
  for (int id : ids) {
    draw(vis.at(id), batch.visible);
    draw(ir.at(id), batch.infrared);
  }
  return batch;
}

}  // namespace bit::synth
