#pragma once

#include "bit/diffcore/tensor.hpp"
#include "bit/encoder/encoder.hpp"
#include "bit/qascore/qascore.hpp"
#include "bit/synthdata/dataset.hpp"

#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace bit::retrieval {

struct Metrics {
  std::vector<double> cmc;  ///< cmc[r] = fraction of queries with a hit at rank <= r + 1
  double mAP = 0.0;
  int num_queries = 0;      ///< queries that entered the averages
  int excluded = 0;         ///< queries without any relevant gallery item
};

/// `hits[q][r]` tells whether the item ranked r for query q is relevant.
Metrics cmc_map(const std::vector<std::vector<bool>>& hits);

/// Same, from per-query orderings of gallery positions and relevance by position.
Metrics cmc_map(const std::vector<std::vector<std::size_t>>& rankings,
                const std::vector<std::vector<bool>>& relevant);

struct Ranked {
  std::size_t gallery = 0;  ///< position in the gallery input
  double score = 0.0;
};

/// Cosine similarity of mean-pooled features, best first. Equal scores are
/// ordered by `gallery_ids` ascending.
std::vector<Ranked> coarse_rank(const RowVector& query, const Matrix& gallery,
                                const std::vector<std::uint64_t>& gallery_ids);

struct InferenceConfig {
  int top_K = 50;
  bool use_bit_head = true;
};

/// Backbone output of one sample: patch features and its pooled row.
struct Embedded {
  Tensor patches;
  RowVector pooled;
};

Embedded embed(const encoder::EncoderModel& enc, const synth::SynthSample& s);

struct BitRanking {
  std::vector<Ranked> order;  ///< candidates by Psi, then the rest by coarse score
  std::vector<std::size_t> candidates;
  std::vector<double> psi;    ///< Psi of each candidate, aligned with `candidates`
  int psi_evals = 0;
};

/// Rescores the coarse top-K gallery items with Psi, the query acting as the
/// infrared stream and each gallery item as the visible stream.
BitRanking bit_rank(const Embedded& query, const std::vector<Embedded>& gallery,
                    const std::vector<std::uint64_t>& gallery_ids, const qa::MatchingModel* model,
                    const InferenceConfig& cfg);

struct SimilarityStats {
  double mean_pos = 0.0;
  double mean_neg = 0.0;
  double gap() const { return mean_pos - mean_neg; }
};

SimilarityStats similarity_stats(const std::vector<double>& scores, const std::vector<bool>& labels);

struct Report {
  Metrics metrics;
  SimilarityStats stats;
  int top_K = 0;
  int psi_evals_per_query = 0;
  bool baseline = false;
  /// Per query, gallery positions best first.
  std::vector<std::vector<std::size_t>> rankings;

  double rank1() const { return metrics.cmc.empty() ? 0.0 : metrics.cmc.front(); }
};

/// Infrared queries against the visible gallery of the test split. With
/// `model == nullptr` or `use_bit_head == false` only the cosine ranking is used
/// and the similarity statistics are over cosine scores.
Report evaluate(const encoder::EncoderModel& enc, const qa::MatchingModel* model,
                const synth::Dataset& ds, const InferenceConfig& cfg);

nlohmann::json to_json(const Report& r);

}  // namespace bit::retrieval
