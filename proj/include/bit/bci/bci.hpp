#pragma once

#include "bit/diffcore/tensor.hpp"
#include "bit/nn/layers.hpp"
#include "bit/nn/parameters.hpp"

#include <string>
#include <utility>
#include <vector>

namespace bit::bci {

struct BciConfig {
  int T = 3;
  int channels = 32;
  int heads = 1;

  void validate() const;
  bool operator==(const BciConfig&) const = default;
};

/// One stream's half of a block: attend to the other stream, then an MLP, both pre-norm residual.
struct StreamBlock {
  nn::LayerNormParams ln1;
  nn::AttentionParams attn;
  nn::LayerNormParams ln2;
  nn::FeedForwardBlock ffn;
};

struct BciBlock {
  StreamBlock visible;
  StreamBlock infrared;
};

struct BciStack {
  nn::AttentionParams init_v;  ///< visible queries, infrared keys/values
  nn::AttentionParams init_i;  ///< infrared queries, visible keys/values
  std::vector<BciBlock> blocks;

  int T() const { return static_cast<int>(blocks.size()); }

  /// Registers every parameter under `<prefix>.init_v`, `<prefix>.init_i`, `<prefix>.block<t>.{vis,ir}.*`.
  static BciStack create(nn::ParameterSet& params, const std::string& prefix,
                         const BciConfig& cfg, nn::Initializer& init);
};

/// Every visible sample paired with every infrared sample of a batch.
struct PairBatch {
  std::vector<Tensor> visible;   ///< F_v0 per pair, N x C
  std::vector<Tensor> infrared;  ///< F_i0 per pair, N x C
  std::vector<bool> same_identity;
  std::vector<std::size_t> vis_idx;
  std::vector<std::size_t> ir_idx;
  std::vector<int> vis_identity;
  std::vector<int> ir_identity;

  std::size_t size() const { return visible.size(); }
};

/// Pair p = v * B + i holds visible sample v and infrared sample i.
PairBatch expand_pairs(const std::vector<Tensor>& vis, const std::vector<Tensor>& ir,
                       const std::vector<int>& vis_identity, const std::vector<int>& ir_identity);

Tensor cross_attention(const nn::AttentionParams& p, const Tensor& q_in, const Tensor& kv_in);

using StreamPair = std::pair<Tensor, Tensor>;  ///< (visible, infrared)

StreamPair bci_init(const BciStack& stack, const Tensor& f_v, const Tensor& f_i);
/// Both streams read the stage-t inputs; neither sees the other's update from the same block.
StreamPair bci_block_forward(const BciBlock& block, const Tensor& f_v, const Tensor& f_i);
StreamPair bci_stack_forward(const BciStack& stack, const Tensor& f_v, const Tensor& f_i);

/// Mean-pooled, L2-normalized rows of both streams of every pair: M = 2 * pairs rows.
///
/// Row 2p is pair p's visible output and row 2p + 1 its infrared output; `labels`
/// receives the source identities in the same order.
Tensor pooled_pair_features(const std::vector<StreamPair>& outputs, const PairBatch& pairs,
                            std::vector<int>& labels);

/// Supervised contrastive loss over L2-normalized rows with temperature `tau`.
///
/// For anchor i with positives P_i (same label, j != i) and negatives N_i, each
/// positive contributes -log(e^{s_ip} / (e^{s_ip} + sum_{j in N_i} e^{s_ij})),
/// s = f.f / tau. Anchors without positives are skipped.
Tensor aggregation_contrastive_loss(const Tensor& pooled, const std::vector<int>& labels,
                                    double tau = 1.0 / 16.0);

}  // namespace bit::bci
