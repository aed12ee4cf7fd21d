#include "bit/retrieval/retrieval.hpp"

#include "bit/diffcore/ops.hpp"
#include "bit/errors.hpp"

#include <algorithm>
#include <numeric>

namespace bit::retrieval {

Metrics cmc_map(const std::vector<std::vector<bool>>& hits) {
  Metrics m;
  std::size_t depth = 0;
  for (const auto& h : hits) depth = std::max(depth, h.size());
  m.cmc.assign(depth, 0.0);
  double ap_sum = 0.0;
  for (const auto& h : hits) {
    const auto relevant = std::count(h.begin(), h.end(), true);
    if (relevant == 0) {
      ++m.excluded;
      continue;
    }
    ++m.num_queries;
    std::size_t first = h.size();
    double ap = 0.0;
    int found = 0;
    for (std::size_t r = 0; r < h.size(); ++r) {
      if (!h[r]) continue;
      if (found == 0) first = r;
      ++found;
      ap += static_cast<double>(found) / static_cast<double>(r + 1);
    }
    ap_sum += ap / static_cast<double>(relevant);
    for (std::size_t r = first; r < depth; ++r) m.cmc[r] += 1.0;
  }
  if (m.num_queries > 0) {
    for (auto& v : m.cmc) v /= m.num_queries;
    m.mAP = ap_sum / m.num_queries;
  }
  return m;
}

Metrics cmc_map(const std::vector<std::vector<std::size_t>>& rankings,
                const std::vector<std::vector<bool>>& relevant) {
  if (rankings.size() != relevant.size()) {
    throw DimensionError("cmc_map: ranking and relevance counts differ");
  }
  std::vector<std::vector<bool>> hits(rankings.size());
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    for (std::size_t g : rankings[q]) {
      if (g >= relevant[q].size()) throw DimensionError("cmc_map: ranked item outside gallery");
      hits[q].push_back(relevant[q][g]);
    }
  }
  return cmc_map(hits);
}

namespace {

void sort_ranked(std::vector<Ranked>& items, const std::vector<std::uint64_t>& ids) {
  std::sort(items.begin(), items.end(), [&](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    return ids[a.gallery] < ids[b.gallery];
  });
}

}  // namespace

std::vector<Ranked> coarse_rank(const RowVector& query, const Matrix& gallery,
                                const std::vector<std::uint64_t>& gallery_ids) {
  if (gallery.cols() != query.cols()) {
    throw DimensionError("coarse_rank: query and gallery feature widths differ");
  }
  if (static_cast<Index>(gallery_ids.size()) != gallery.rows()) {
    throw DimensionError("coarse_rank: one identifier per gallery row required");
  }
  const double qn = std::max(query.norm(), 1e-12);
  std::vector<Ranked> out;
  out.reserve(gallery_ids.size());
  for (Index g = 0; g < gallery.rows(); ++g) {
    const double gn = std::max(gallery.row(g).norm(), 1e-12);
    out.push_back({static_cast<std::size_t>(g), query.dot(gallery.row(g)) / (qn * gn)});
  }
  sort_ranked(out, gallery_ids);
  return out;
}

Embedded embed(const encoder::EncoderModel& enc, const synth::SynthSample& s) {
  Matrix f = encoder::encode(enc, s).value();
  RowVector pooled = f.colwise().mean();
  return {Tensor::constant(std::move(f)), std::move(pooled)};
}

BitRanking bit_rank(const Embedded& query, const std::vector<Embedded>& gallery,
                    const std::vector<std::uint64_t>& gallery_ids, const qa::MatchingModel* model,
                    const InferenceConfig& cfg) {
  if (cfg.top_K < 1) throw UsageError("bit_rank: top_K must be at least 1");
  if (gallery.empty()) throw UsageError("bit_rank: empty gallery");
  Matrix pooled(static_cast<Index>(gallery.size()), query.pooled.cols());
  for (std::size_t g = 0; g < gallery.size(); ++g) pooled.row(static_cast<Index>(g)) = gallery[g].pooled;
  std::vector<Ranked> coarse = coarse_rank(query.pooled, pooled, gallery_ids);

  BitRanking out;
  if (!cfg.use_bit_head || model == nullptr) {
    out.order = std::move(coarse);
    return out;
  }
  const std::size_t k = std::min(static_cast<std::size_t>(cfg.top_K), coarse.size());
  std::vector<Ranked> rescored;
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t g = coarse[r].gallery;
    const double psi = qa::score_pair(*model, gallery[g].patches, query.patches).psi.item();
    ++out.psi_evals;
    out.candidates.push_back(g);
    out.psi.push_back(psi);
    rescored.push_back({g, psi});
  }
  sort_ranked(rescored, gallery_ids);
  out.order = std::move(rescored);
  out.order.insert(out.order.end(), coarse.begin() + static_cast<std::ptrdiff_t>(k), coarse.end());
  return out;
}

SimilarityStats similarity_stats(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw DimensionError("similarity_stats: length mismatch");
  double pos = 0.0, neg = 0.0;
  std::size_t np = 0, nn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i]) {
      pos += scores[i];
      ++np;
    } else {
      neg += scores[i];
      ++nn;
    }
  }
  if (np == 0 || nn == 0) {
    throw UsageError("similarity_stats: need at least one positive and one negative score");
  }
  return {pos / static_cast<double>(np), neg / static_cast<double>(nn)};
}

Report evaluate(const encoder::EncoderModel& enc, const qa::MatchingModel* model,
                const synth::Dataset& ds, const InferenceConfig& cfg) {
  const auto q_idx = ds.indices(synth::Split::kQuery);
  const auto g_idx = ds.indices(synth::Split::kGallery);
  if (q_idx.empty() || g_idx.empty()) throw UsageError("evaluate: dataset has no query or gallery split");

  std::vector<Embedded> gallery;
  std::vector<std::uint64_t> ids;
  for (std::size_t i : g_idx) {
    gallery.push_back(embed(enc, ds.samples[i]));
    ids.push_back(i);
  }

  Report rep;
  rep.baseline = !cfg.use_bit_head || model == nullptr;
  rep.top_K = cfg.top_K;
  std::vector<std::vector<bool>> relevant;
  std::vector<double> scores;
  std::vector<bool> labels;
  for (std::size_t qi : q_idx) {
    const auto& qs = ds.samples[qi];
    BitRanking r = bit_rank(embed(enc, qs), gallery, ids, model, cfg);
    std::vector<bool> rel;
    for (std::size_t gi : g_idx) rel.push_back(ds.samples[gi].identity == qs.identity);
    std::vector<std::size_t> order;
    for (const auto& item : r.order) order.push_back(item.gallery);
    if (rep.baseline) {
      for (const auto& item : r.order) {
        scores.push_back(item.score);
        labels.push_back(rel[item.gallery]);
      }
    } else {
      for (std::size_t c = 0; c < r.candidates.size(); ++c) {
        scores.push_back(r.psi[c]);
        labels.push_back(rel[r.candidates[c]]);
      }
    }
    rep.psi_evals_per_query = r.psi_evals;
    rep.rankings.push_back(std::move(order));
    relevant.push_back(std::move(rel));
  }
  rep.metrics = cmc_map(rep.rankings, relevant);
  const bool has_pos = std::find(labels.begin(), labels.end(), true) != labels.end();
  const bool has_neg = std::find(labels.begin(), labels.end(), false) != labels.end();
  if (has_pos && has_neg) rep.stats = similarity_stats(scores, labels);
  return rep;
}

nlohmann::json to_json(const Report& r) {
  return {{"cmc", r.metrics.cmc},
          {"mAP", r.metrics.mAP},
          {"mean_pos", r.stats.mean_pos},
          {"mean_neg", r.stats.mean_neg},
          {"num_queries", r.metrics.num_queries},
          {"top_K", r.top_K},
          {"psi_evals_per_query", r.psi_evals_per_query}};
}

}  // namespace bit::retrieval
