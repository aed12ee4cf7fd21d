#pragma once

#include "bit/diffcore/tensor.hpp"
#include "bit/nn/layers.hpp"
#include "bit/nn/optim.hpp"
#include "bit/nn/parameters.hpp"
#include "bit/synthdata/dataset.hpp"

#include <cstdint>
#include <vector>

namespace bit::encoder {

struct EncoderConfig {
  int raw_dim = 16;
  int patches = 8;
  int channels = 32;
  int self_attn_depth = 2;
  int heads = 1;
  int num_train_identities = 40;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Pre-norm self-attention block: x + Att(LN x), then + MLP(LN x).
struct SelfAttentionBlock {
  nn::LayerNormParams ln1;
  nn::AttentionParams attn;
  nn::LayerNormParams ln2;
  nn::FeedForwardBlock ffn;
};

/// Shared backbone: one parameter set serves both modalities.
class EncoderModel {
 public:
  EncoderModel(const EncoderConfig& cfg, std::uint64_t seed);

  EncoderModel(const EncoderModel&) = delete;
  EncoderModel& operator=(const EncoderModel&) = delete;
  EncoderModel(EncoderModel&&) = default;
  EncoderModel& operator=(EncoderModel&&) = default;

  const EncoderConfig& config() const { return cfg_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  const nn::LinearLayer& projection() const { return proj_; }
  const Tensor& positional() const { return pos_; }
  const std::vector<SelfAttentionBlock>& blocks() const { return blocks_; }
  const nn::LinearLayer& classifier() const { return classifier_; }

 private:
  EncoderConfig cfg_;
  nn::ParameterSet params_;
  nn::LinearLayer proj_;
  Tensor pos_;
  std::vector<SelfAttentionBlock> blocks_;
  nn::LinearLayer classifier_;
};

/// Patch embeddings F (N x C) of one sample's raw patches (N x raw_dim).
Tensor encode(const EncoderModel& model, const Matrix& patches);
Tensor encode(const EncoderModel& model, const synth::SynthSample& sample);

/// Mean over patches, one row per input: B x C.
Tensor pooled_features(const std::vector<Tensor>& patch_embeddings);

/// Mean cross-entropy of the identity classifier over pooled rows.
Tensor id_loss(const EncoderModel& model, const Tensor& pooled, const std::vector<int>& labels);

/// Batch-hard triplet loss with euclidean distance.
///
/// Anchors without a positive or without a negative are skipped; a batch with
/// no usable anchor is a UsageError.
Tensor triplet_loss(const Tensor& pooled, const std::vector<int>& labels, double margin = 0.3);

struct Stage1Losses {
  double id = 0.0;
  double triplet = 0.0;
  double total() const { return id + triplet; }
};

/// Forward and backward on L_base = id_loss + triplet_loss for one PK batch, then one AdamW update.
Stage1Losses stage1_step(EncoderModel& model, const synth::Dataset& ds,
                         const synth::PkBatch& batch, const nn::OptimizerConfig& optim,
                         double lr_t, double margin = 0.3);

}  // namespace bit::encoder
