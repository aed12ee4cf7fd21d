#include "bit/qascore/qascore.hpp"

#include "bit/diffcore/ops.hpp"
#include "bit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bit::qa {

void QaConfig::validate(int patches) const {
  if (k < 1 || k > patches) {
    throw ConfigError("qa config: k = " + std::to_string(k) + " must lie in [1, " +
                      std::to_string(patches) + "]");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("qa config: alpha must lie in [0, 1]");
  if (!(lambda >= 0.0)) throw ConfigError("qa config: lambda must be non-negative");
}

SimPair similarity_matrices(const Tensor& f_v, const Tensor& f_i) {
  if (f_v.shape() != f_i.shape()) {
    throw DimensionError("similarity_matrices: visible and infrared features differ in shape");
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(f_v.cols()));
  Tensor raw = diff::scale(diff::matmul(f_v, diff::transpose(f_i)), inv);
  return {raw, diff::softmax_rows(raw), diff::softmax_rows(diff::transpose(raw))};
}

Neighborhoods topk_filter(const Matrix& s, int k) {
  if (k < 1 || k > s.cols()) {
    throw UsageError("topk_filter: k = " + std::to_string(k) + " outside [1, " +
                     std::to_string(s.cols()) + "]");
  }
  Neighborhoods out(static_cast<std::size_t>(s.rows()));
  std::vector<Index> order(static_cast<std::size_t>(s.cols()));
  for (Index r = 0; r < s.rows(); ++r) {
    std::iota(order.begin(), order.end(), Index{0});
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
      return s(r, a) > s(r, b) || (s(r, a) == s(r, b) && a < b);
    });
    out[static_cast<std::size_t>(r)].assign(order.begin(), order.begin() + k);
  }
  return out;
}

std::vector<IndexPair> mutual_matches(const Neighborhoods& r_vi, const Neighborhoods& r_iv) {
  std::vector<IndexPair> m;
  for (std::size_t p = 0; p < r_vi.size(); ++p) {
    std::vector<Index> qs = r_vi[p];
    std::sort(qs.begin(), qs.end());
    for (Index q : qs) {
      if (q < 0 || static_cast<std::size_t>(q) >= r_iv.size()) continue;
      const auto& back = r_iv[static_cast<std::size_t>(q)];
      if (std::find(back.begin(), back.end(), static_cast<Index>(p)) != back.end()) {
        m.emplace_back(static_cast<Index>(p), q);
      }
    }
  }
  return m;
}

double MatchSet::weight(const IndexPair& m) const {
  return std::find(mutual.begin(), mutual.end(), m) != mutual.end() ? 1.0 : alpha;
}

std::vector<IndexPair> MatchSet::of(Index p) const {
  std::vector<IndexPair> out;
  for (const auto& m : mutual)
    if (m.first == p) out.push_back(m);
  for (const auto& m : complementary)
    if (m.first == p) out.push_back(m);
  return out;
}

MatchSet smooth_complement(const std::vector<IndexPair>& mutual, const Matrix& s_vi, double alpha) {
  MatchSet ms{mutual, {}, alpha};
  std::vector<bool> covered(static_cast<std::size_t>(s_vi.rows()), false);
  for (const auto& [p, q] : mutual) covered[static_cast<std::size_t>(p)] = true;
  for (Index p = 0; p < s_vi.rows(); ++p) {
    if (covered[static_cast<std::size_t>(p)]) continue;
    Index best = 0;
    for (Index q = 1; q < s_vi.cols(); ++q)
      if (s_vi(p, q) > s_vi(p, best)) best = q;
    ms.complementary.emplace_back(p, best);
  }
  return ms;
}

Tensor patch_similarity_vector(const MatchSet& ms, const Tensor& s_vi) {
  const Index n = s_vi.rows();
  // (p, q, coefficient) triples: Ŝ[p] = Σ coeff · S_vi[p, q].
  struct Term {
    Index p, q;
    double coeff;
  };
  std::vector<Term> terms;
  std::vector<int> count(static_cast<std::size_t>(n), 0);
  for (const auto& [p, q] : ms.mutual) ++count[static_cast<std::size_t>(p)];
  for (const auto& [p, q] : ms.complementary) ++count[static_cast<std::size_t>(p)];
  for (Index p = 0; p < n; ++p) {
    if (count[static_cast<std::size_t>(p)] == 0) {
      throw UsageError("patch_similarity_vector: visible patch " + std::to_string(p) +
                       " has no match");
    }
  }
  auto push = [&](const IndexPair& m, double w) {
    if (m.second < 0 || m.second >= s_vi.cols()) {
      throw DimensionError("patch_similarity_vector: match column outside S_vi");
    }
    terms.push_back({m.first, m.second, w / count[static_cast<std::size_t>(m.first)]});
  };
  for (const auto& m : ms.mutual) push(m, 1.0);
  for (const auto& m : ms.complementary) push(m, ms.alpha);

  Matrix out = Matrix::Zero(1, n);
  for (const auto& t : terms) out(0, t.p) += t.coeff * s_vi.value()(t.p, t.q);
  return Tensor::from_op("patch_similarity", std::move(out), {s_vi},
                         [terms = std::move(terms)](const Matrix& g, std::span<Matrix* const> in) {
                           if (!in[0]) return;
                           for (const auto& t : terms) (*in[0])(t.p, t.q) += t.coeff * g(0, t.p);
                         });
}

CasmHead CasmHead::create(nn::ParameterSet& params, const std::string& prefix, Index patches,
                          nn::Initializer& init) {
  return {nn::LinearLayer::create(params, prefix + ".lin1", patches, 4 * patches, init),
          nn::LinearLayer::create(params, prefix + ".lin2", 4 * patches, 1, init)};
}

Tensor casm_score(const CasmHead& head, const Tensor& s_hat) {
  if (s_hat.rows() != 1 || s_hat.cols() != head.lin1.in_features()) {
    throw DimensionError("casm_score: expected a 1x" + std::to_string(head.lin1.in_features()) +
                         " similarity vector");
  }
  return diff::sigmoid(nn::linear_forward(head.lin2, diff::gelu(nn::linear_forward(head.lin1, s_hat))));
}

Tensor pair_loss(const Tensor& psi, bool same_identity) {
  Tensor p = diff::clamp(psi, kPsiClamp, 1.0 - kPsiClamp);
  if (same_identity) return diff::neg(diff::log(p));
  return diff::neg(diff::log(diff::sub(Tensor::scalar(1.0), p)));
}

Tensor total_loss(const Tensor& mean_pair_loss, const Tensor& l_ac, double lambda) {
  if (!(lambda >= 0.0)) throw UsageError("total_loss: lambda must be non-negative");
  if (lambda == 0.0) return mean_pair_loss;
  return diff::add(mean_pair_loss, diff::scale(l_ac, lambda));
}

QaResult qa_forward(const Tensor& f_v, const Tensor& f_i, const QaConfig& cfg,
                    const CasmHead& head) {
  SimPair sim = similarity_matrices(f_v, f_i);
  const Neighborhoods r_vi = topk_filter(sim.s_vi.value(), cfg.k);
  const Neighborhoods r_iv = topk_filter(sim.s_iv.value(), cfg.k);
  MatchSet ms = smooth_complement(mutual_matches(r_vi, r_iv), sim.s_vi.value(), cfg.alpha);
  Tensor s_hat = patch_similarity_vector(ms, sim.s_vi);
  Tensor psi = casm_score(head, s_hat);
  return {psi, std::move(ms), s_hat, sim};
}

MatchingModel::MatchingModel(const bci::BciConfig& bci, const QaConfig& qa, int patches,
                             std::uint64_t seed)
    : bci_cfg_(bci), qa_cfg_(qa), patches_(patches) {
  bci_cfg_.validate();
  qa_cfg_.validate(patches);
  nn::Initializer init(seed);
  stack_ = bci::BciStack::create(params_, "bci", bci_cfg_, init);
  head_ = CasmHead::create(params_, "casm", patches, init);
}

QaResult score_pair(const MatchingModel& model, const Tensor& f_v, const Tensor& f_i) {
  auto [v, i] = bci::bci_stack_forward(model.stack(), f_v, f_i);
  return qa_forward(v, i, model.qa_config(), model.head());
}

Tensor stage2_loss(const MatchingModel& model, const bci::PairBatch& pairs, Stage2Losses* parts) {
  std::vector<bci::StreamPair> outs;
  std::vector<Tensor> losses;
  outs.reserve(pairs.size());
  losses.reserve(pairs.size());
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    outs.push_back(bci::bci_stack_forward(model.stack(), pairs.visible[p], pairs.infrared[p]));
    QaResult r = qa_forward(outs.back().first, outs.back().second, model.qa_config(), model.head());
    losses.push_back(pair_loss(r.psi, pairs.same_identity[p]));
  }
  Tensor mean_pair = diff::scale(diff::sum_scalars(losses), 1.0 / static_cast<double>(losses.size()));
  std::vector<int> labels;
  Tensor pooled = bci::pooled_pair_features(outs, pairs, labels);
  Tensor l_ac = bci::aggregation_contrastive_loss(pooled, labels);
  Tensor total = total_loss(mean_pair, l_ac, model.qa_config().lambda);
  if (parts) *parts = {mean_pair.item(), l_ac.item(), total.item()};
  return total;
}

Stage2Losses stage2_step(const encoder::EncoderModel& enc, MatchingModel& model,
                         const synth::Dataset& ds, const synth::PkBatch& batch,
                         const nn::OptimizerConfig& optim, double lr_t) {
  auto features = [&](const std::vector<std::size_t>& idx, std::vector<Tensor>& f,
                      std::vector<int>& ids) {
    for (std::size_t i : idx) {
      // Detached from the encoder's parameters, which stay frozen.
      f.push_back(Tensor::constant(encoder::encode(enc, ds.samples[i]).value()));
      ids.push_back(ds.samples[i].identity);
    }
  };
  std::vector<Tensor> fv, fi;
  std::vector<int> idv, idi;
  features(batch.visible, fv, idv);
  features(batch.infrared, fi, idi);
  bci::PairBatch pairs = bci::expand_pairs(fv, fi, idv, idi);

  Stage2Losses parts;
  Tensor loss = stage2_loss(model, pairs, &parts);
  model.params().zero_grads();
  diff::backward(loss);
  nn::adamw_step(model.params(), optim, lr_t);
  return parts;
}

}  // namespace bit::qa
