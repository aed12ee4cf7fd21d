#pragma once

#include "bit/bci/bci.hpp"
#include "bit/diffcore/tensor.hpp"
#include "bit/encoder/encoder.hpp"
#include "bit/nn/layers.hpp"
#include "bit/nn/optim.hpp"
#include "bit/nn/parameters.hpp"
#include "bit/synthdata/dataset.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace bit::qa {

struct QaConfig {
  int k = 3;
  double alpha = 0.20;
  double lambda = 0.6;

  /// `patches` bounds k from above.
  void validate(int patches) const;
  bool operator==(const QaConfig&) const = default;
};

struct SimPair {
  Tensor raw;   ///< F_v F_i^T / sqrt(C)
  Tensor s_vi;  ///< softmax over rows of raw
  Tensor s_iv;  ///< softmax over rows of raw^T
};

SimPair similarity_matrices(const Tensor& f_v, const Tensor& f_i);

using Neighborhoods = std::vector<std::vector<Index>>;
using IndexPair = std::pair<Index, Index>;

/// Indices of the k largest entries of each row, by descending value then ascending index.
Neighborhoods topk_filter(const Matrix& s, int k);

/// (p, q) with q in r_vi[p] and p in r_iv[q], ascending in p then q.
std::vector<IndexPair> mutual_matches(const Neighborhoods& r_vi, const Neighborhoods& r_iv);

struct MatchSet {
  std::vector<IndexPair> mutual;
  std::vector<IndexPair> complementary;
  double alpha = 0.2;

  double weight(const IndexPair& m) const;
  /// Matches of visible patch p, mutual first.
  std::vector<IndexPair> of(Index p) const;
};

/// Adds (p, argmax_q s_vi[p, q]) for every visible patch with no mutual match.
MatchSet smooth_complement(const std::vector<IndexPair>& mutual, const Matrix& s_vi, double alpha);

/// S_hat[p] = (1/|M'_p|) sum_{q in M'_p} w(p, q) S_vi[p, q], as a 1 x N row.
/// Gradients reach only the gathered S_vi entries.
Tensor patch_similarity_vector(const MatchSet& ms, const Tensor& s_vi);

struct CasmHead {
  nn::LinearLayer lin1;  ///< N -> 4N
  nn::LinearLayer lin2;  ///< 4N -> 1

  static CasmHead create(nn::ParameterSet& params, const std::string& prefix, Index patches,
                         nn::Initializer& init);
};

/// sigmoid(lin2(gelu(lin1(S_hat)))) as a 1 x 1 tensor.
Tensor casm_score(const CasmHead& head, const Tensor& s_hat);

inline constexpr double kPsiClamp = 1e-12;

/// Binary cross-entropy of a score; Psi is clamped to [1e-12, 1 - 1e-12] first.
Tensor pair_loss(const Tensor& psi, bool same_identity);

/// mean pair loss + lambda * L_AC.
Tensor total_loss(const Tensor& mean_pair_loss, const Tensor& l_ac, double lambda);

struct QaResult {
  Tensor psi;
  MatchSet matches;
  Tensor s_hat;
  SimPair sim;
};

QaResult qa_forward(const Tensor& f_v, const Tensor& f_i, const QaConfig& cfg,
                    const CasmHead& head);

/// The trainable second-stage model: BCI decoder plus scoring head.
class MatchingModel {
 public:
  MatchingModel(const bci::BciConfig& bci, const QaConfig& qa, int patches, std::uint64_t seed);

  MatchingModel(const MatchingModel&) = delete;
  MatchingModel& operator=(const MatchingModel&) = delete;
  MatchingModel(MatchingModel&&) = default;
  MatchingModel& operator=(MatchingModel&&) = default;

  const bci::BciConfig& bci_config() const { return bci_cfg_; }
  const QaConfig& qa_config() const { return qa_cfg_; }
  int patches() const { return patches_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  const bci::BciStack& stack() const { return stack_; }
  const CasmHead& head() const { return head_; }

 private:
  bci::BciConfig bci_cfg_;
  QaConfig qa_cfg_;
  int patches_;
  nn::ParameterSet params_;
  bci::BciStack stack_;
  CasmHead head_;
};

/// Psi for one (visible, infrared) pair of backbone feature maps.
QaResult score_pair(const MatchingModel& model, const Tensor& f_v, const Tensor& f_i);

struct Stage2Losses {
  double pair = 0.0;
  double ac = 0.0;
  double total = 0.0;
};

/// L_total over all within-batch pairs of backbone features.
Tensor stage2_loss(const MatchingModel& model, const bci::PairBatch& pairs, Stage2Losses* parts);

/// One AdamW update of the matching model; the encoder is only read.
Stage2Losses stage2_step(const encoder::EncoderModel& enc, MatchingModel& model,
                         const synth::Dataset& ds, const synth::PkBatch& batch,
                         const nn::OptimizerConfig& optim, double lr_t);

}  // namespace bit::qa
