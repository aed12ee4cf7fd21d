#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bit/errors.hpp"
#include "bit/retrieval/retrieval.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace bit;
using namespace bit::retrieval;
using namespace bit::testing;

namespace {

std::vector<Embedded> random_gallery(std::mt19937_64& rng, std::size_t n, Index patches, Index channels) {
  std::vector<Embedded> out;
  for (std::size_t i = 0; i < n; ++i) {
    Matrix f = random_matrix(rng, patches, channels);
    RowVector pooled = f.colwise().mean();
    out.push_back({Tensor::constant(f), pooled});
  }
  return out;
}

std::vector<std::uint64_t> iota_ids(std::size_t n, std::uint64_t start = 0) {
  std::vector<std::uint64_t> ids(n);
  std::iota(ids.begin(), ids.end(), start);
  return ids;
}

}  // namespace

TEST_CASE("cmc_map examples") {
  Metrics two = cmc_map({{true, false}, {false, true}});
  CHECK(two.cmc[0] == doctest::Approx(0.5));
  CHECK(two.cmc[1] == doctest::Approx(1.0));

  Metrics one = cmc_map({{true, false, true, false}});
  CHECK(std::abs(one.mAP - (1.0 + 2.0 / 3.0) / 2.0) < 1e-15);
  CHECK(std::abs(one.mAP - 0.8333) < 1e-4);

  Metrics perfect = cmc_map({{true, false, false}, {true, true, false}});
  CHECK(perfect.mAP == 1.0);
  CHECK(perfect.cmc[0] == 1.0);

  Metrics excl = cmc_map({{false, false}, {false, true}});
  CHECK(excl.excluded == 1);
  CHECK(excl.num_queries == 1);
  CHECK(excl.mAP == doctest::Approx(0.5));

  CHECK_THROWS_AS(cmc_map({{0, 3}}, {{true, false}}), DimensionError);
}

TEST_CASE("cmc_map agrees with the exhaustive definition and is monotone") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<bool>> hits;
    double ap = 0.0;
    int used = 0;
    for (int q = 0; q < 6; ++q) {
      std::vector<bool> h(9);
      for (auto&& b : h) b = rng() % 3 == 0;
      if (std::find(h.begin(), h.end(), true) != h.end()) {
        ap += cmc_ap_oracle(h);
        ++used;
      }
      hits.push_back(h);
    }
    Metrics m = cmc_map(hits);
    CHECK(m.num_queries == used);
    if (used > 0) CHECK(std::abs(m.mAP - ap / used) < 1e-12);
    for (std::size_t r = 0; r + 1 < m.cmc.size(); ++r) CHECK(m.cmc[r] <= m.cmc[r + 1]);
  }
}

TEST_CASE("coarse_rank") {
  Matrix gallery(3, 2);
  gallery << 1, 0, 0.6, 0.8, -1, 0.2;
  RowVector q(2);
  q << 0.6, 0.8;
  auto r = coarse_rank(q, gallery, iota_ids(3));
  CHECK(r[0].gallery == 1);
  CHECK(r[0].score == doctest::Approx(1.0).epsilon(1e-15));

  // Orthogonal gallery: all scores zero, identifier order wins.
  Matrix ortho(3, 4);
  ortho << 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1;
  RowVector e0 = RowVector::Zero(4);
  e0(0) = 1.0;
  auto o = coarse_rank(e0, ortho, {7, 3, 5});
  CHECK(o[0].gallery == 1);
  CHECK(o[1].gallery == 2);
  CHECK(o[2].gallery == 0);
  for (const auto& x : o) CHECK(x.score == 0.0);

  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix g = random_matrix(rng, 6, 5);
    RowVector qv = random_matrix(rng, 1, 5);
    auto got = coarse_rank(qv, g, iota_ids(6));
    for (const auto& item : got) {
      double dot = 0, nq = 0, ng = 0;
      for (Index c = 0; c < 5; ++c) {
        dot += qv(c) * g(static_cast<Index>(item.gallery), c);
        nq += qv(c) * qv(c);
        ng += g(static_cast<Index>(item.gallery), c) * g(static_cast<Index>(item.gallery), c);
      }
      CHECK(std::abs(item.score - dot / std::sqrt(nq * ng)) < 1e-12);
    }
    for (std::size_t i = 0; i + 1 < got.size(); ++i) CHECK(got[i].score >= got[i + 1].score);
  }
  CHECK_THROWS_AS(coarse_rank(q, Matrix::Zero(2, 3), iota_ids(2)), DimensionError);
}

TEST_CASE("bit_rank candidate accounting and ordering") {
  std::mt19937_64 rng(21);
  qa::MatchingModel model(bci::BciConfig{1, 4, 1}, qa::QaConfig{2, 0.2, 0.6}, 3, 4);
  auto gallery = random_gallery(rng, 7, 3, 4);
  auto ids = iota_ids(7, 100);
  auto query = random_gallery(rng, 1, 3, 4).front();

  Matrix pooled(7, 4);
  for (std::size_t g = 0; g < 7; ++g) pooled.row(static_cast<Index>(g)) = gallery[g].pooled;
  auto coarse = coarse_rank(query.pooled, pooled, ids);

  for (int k : {1, 3, 7, 50}) {
    auto r = bit_rank(query, gallery, ids, &model, {k, true});
    CHECK(r.psi_evals == std::min(k, 7));
    CHECK(r.order.size() == 7);
    for (std::size_t i = static_cast<std::size_t>(r.psi_evals); i < 7; ++i) CHECK(r.order[i].gallery == coarse[i].gallery);
  }

  SUBCASE("top_K = 1 rescores only the coarse best") {
    auto r = bit_rank(query, gallery, ids, &model, {1, true});
    CHECK(r.candidates == std::vector<std::size_t>{coarse[0].gallery});
    for (std::size_t i = 0; i < 7; ++i) CHECK(r.order[i].gallery == coarse[i].gallery);
  }

  SUBCASE("full top_K equals exhaustive Psi ranking") {
    std::vector<std::pair<double, std::size_t>> exhaustive;
    for (std::size_t g = 0; g < 7; ++g)
      exhaustive.push_back({qa::score_pair(model, gallery[g].patches, query.patches).psi.item(), g});
    std::sort(exhaustive.begin(), exhaustive.end(), [&](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : ids[a.second] < ids[b.second];
    });
    auto r = bit_rank(query, gallery, ids, &model, {7, true});
    for (std::size_t i = 0; i < 7; ++i) {
      CHECK(r.order[i].gallery == exhaustive[i].second);
      CHECK(r.order[i].score == exhaustive[i].first);
    }
  }

  SUBCASE("without the head the ranking is the coarse ranking, bit for bit") {
    for (const qa::MatchingModel* m : {static_cast<const qa::MatchingModel*>(&model),
                                       static_cast<const qa::MatchingModel*>(nullptr)}) {
      auto r = bit_rank(query, gallery, ids, m, {3, false});
      CHECK(r.psi_evals == 0);
      REQUIRE(r.order.size() == coarse.size());
      for (std::size_t i = 0; i < coarse.size(); ++i) {
        CHECK(r.order[i].gallery == coarse[i].gallery);
        CHECK(r.order[i].score == coarse[i].score);
      }
    }
  }

  CHECK_THROWS_AS(bit_rank(query, gallery, ids, &model, {0, true}), UsageError);
}

TEST_CASE("gallery permutation leaves the metrics unchanged") {
  std::mt19937_64 rng(31);
  qa::MatchingModel model(bci::BciConfig{1, 4, 1}, qa::QaConfig{2, 0.2, 0.6}, 3, 6);
  const std::size_t n = 6;
  auto gallery = random_gallery(rng, n, 3, 4);
  // Duplicate one item so that score ties occur.
  gallery[4] = gallery[1];
  std::vector<int> gallery_identity{0, 1, 2, 0, 1, 2};
  auto ids = iota_ids(n);
  auto queries = random_gallery(rng, 4, 3, 4);
  std::vector<int> query_identity{0, 1, 2, 1};

  auto metrics_for = [&](const std::vector<std::size_t>& perm, bool head) {
    std::vector<Embedded> g;
    std::vector<std::uint64_t> pid;
    std::vector<int> pident;
    for (std::size_t p : perm) {
      g.push_back(gallery[p]);
      pid.push_back(ids[p]);
      pident.push_back(gallery_identity[p]);
    }
    std::vector<std::vector<std::size_t>> rankings;
    std::vector<std::vector<bool>> relevant;
    for (std::size_t q = 0; q < queries.size(); ++q) {
      auto r = bit_rank(queries[q], g, pid, &model, {3, head});
      std::vector<std::size_t> order;
      for (const auto& item : r.order) order.push_back(item.gallery);
      rankings.push_back(order);
      std::vector<bool> rel;
      for (int id : pident) rel.push_back(id == query_identity[q]);
      relevant.push_back(rel);
    }
    return cmc_map(rankings, relevant);
  };

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (bool head : {false, true}) {
    const Metrics ref = metrics_for(perm, head);
    std::mt19937_64 prng(7);
    for (int t = 0; t < 50; ++t) {
      std::shuffle(perm.begin(), perm.end(), prng);
      const Metrics m = metrics_for(perm, head);
      CHECK(m.cmc == ref.cmc);
      CHECK(m.mAP == ref.mAP);
    }
  }
}

TEST_CASE("similarity_stats") {
  auto s = similarity_stats({0.2, 0.8, 0.1}, {true, true, false});
  CHECK(s.mean_pos == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.mean_neg == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(similarity_stats({0.3, 0.3, 0.7, 0.7}, {true, false, true, false}).gap() == 0.0);
  CHECK_THROWS_AS(similarity_stats({0.1, 0.2}, {true, true}), UsageError);

  std::mt19937_64 rng(41);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> v;
    std::vector<bool> y;
    double sp = 0, sn = 0;
    int np = 0, nn = 0;
    for (int i = 0; i < 30; ++i) {
      v.push_back(std::uniform_real_distribution<double>(0, 1)(rng));
      y.push_back(i % 3 == 0);
      (y.back() ? sp : sn) += v.back();
      (y.back() ? np : nn) += 1;
    }
    auto st = similarity_stats(v, y);
    CHECK(std::abs(st.mean_pos - sp / np) < 1e-15);
    CHECK(std::abs(st.mean_neg - sn / nn) < 1e-15);
  }
}

TEST_CASE("evaluate on a small dataset") {
  synth::GenConfig g;
  g.num_identities = 8;
  g.num_test_identities = 3;
  g.collision_groups = 2;
  g.vis_per_id = 2;
  g.ir_per_id = 2;
  const auto ds = synth::generate(g);
  encoder::EncoderConfig ec;
  ec.channels = 8;
  ec.num_train_identities = 5;
  encoder::EncoderModel enc(ec, 3);
  qa::MatchingModel model(bci::BciConfig{1, 8, 1}, qa::QaConfig{}, 8, 4);

  Report base = evaluate(enc, nullptr, ds, {50, false});
  CHECK(base.baseline);
  CHECK(base.metrics.num_queries == 6);
  CHECK(base.psi_evals_per_query == 0);
  CHECK(base.rankings.size() == 6);

  Report bit = evaluate(enc, &model, ds, {50, true});
  CHECK_FALSE(bit.baseline);
  CHECK(bit.psi_evals_per_query == 3);
  for (double p : {bit.stats.mean_pos, bit.stats.mean_neg}) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
  Report bit2 = evaluate(enc, &model, ds, {2, true});
  CHECK(bit2.psi_evals_per_query == 2);

  auto j = to_json(bit);
  for (const char* key : {"cmc", "mAP", "mean_pos", "mean_neg", "num_queries", "top_K", "psi_evals_per_query"})
    CHECK(j.contains(key));
  CHECK(to_json(evaluate(enc, nullptr, ds, {50, false})).dump() == to_json(base).dump());
}
