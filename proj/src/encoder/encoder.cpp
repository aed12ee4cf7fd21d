#include "bit/encoder/encoder.hpp"

#include "bit/diffcore/ops.hpp"
#include "bit/errors.hpp"


namespace bit::encoder {

void EncoderConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("encoder config: " + msg);
  };
  require(raw_dim >= 1, "raw_dim must be positive");
  require(patches >= 1, "patches must be positive");
  require(channels >= 1, "channels must be positive");
  require(self_attn_depth >= 0, "self_attn_depth must be non-negative");
  require(heads >= 1 && channels % heads == 0, "heads must divide channels");
  require(num_train_identities >= 1, "num_train_identities must be positive");
}

EncoderModel::EncoderModel(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  nn::Initializer init(seed);
  const Index c = cfg_.channels;
  proj_ = nn::LinearLayer::create(params_, "encoder.proj", cfg_.raw_dim, c, init);
  pos_ = params_.add("encoder.pos", init.glorot(cfg_.patches, c));
  for (int b = 0; b < cfg_.self_attn_depth; ++b) {
    const std::string p = "encoder.block" + std::to_string(b);
    SelfAttentionBlock blk;
    blk.ln1 = nn::LayerNormParams::create(params_, p + ".ln1", c);
    blk.attn = nn::AttentionParams::create(params_, p + ".attn", c, cfg_.heads, init);
    blk.ln2 = nn::LayerNormParams::create(params_, p + ".ln2", c);
    blk.ffn = nn::FeedForwardBlock::create(params_, p + ".ffn", c, init);
    blocks_.push_back(std::move(blk));
  }
  classifier_ =
      nn::LinearLayer::create(params_, "encoder.classifier", c, cfg_.num_train_identities, init);
}

Tensor encode(const EncoderModel& model, const Matrix& patches) {
  const auto& cfg = model.config();
  if (patches.rows() != cfg.patches || patches.cols() != cfg.raw_dim) {
    throw DimensionError("encode: expected " + std::to_string(cfg.patches) + "x" +
                         std::to_string(cfg.raw_dim) + " patches, got " +
                         std::to_string(patches.rows()) + "x" + std::to_string(patches.cols()));
  }
  Tensor x = diff::add(nn::linear_forward(model.projection(), Tensor::constant(patches)),
                       model.positional());
  for (const auto& blk : model.blocks()) {
    Tensor h = nn::layer_norm(blk.ln1, x);
    x = diff::add(x, nn::attention(blk.attn, h, h));
    x = diff::add(x, nn::ffn_forward(blk.ffn, nn::layer_norm(blk.ln2, x)));
  }
  return x;
}

Tensor encode(const EncoderModel& model, const synth::SynthSample& sample) {
  return encode(model, sample.patches);
}

Tensor pooled_features(const std::vector<Tensor>& patch_embeddings) {
  std::vector<Tensor> rows;
  rows.reserve(patch_embeddings.size());
  for (const auto& f : patch_embeddings) rows.push_back(diff::mean_pool_rows(f));
  return diff::vconcat(rows);
}

Tensor id_loss(const EncoderModel& model, const Tensor& pooled, const std::vector<int>& labels) {
  if (static_cast<Index>(labels.size()) != pooled.rows()) {
    throw DimensionError("id_loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(pooled.rows()) + " rows");
  }
  const int classes = model.config().num_train_identities;
  std::vector<std::pair<Index, Index>> picks;
  picks.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw UsageError("id_loss: label " + std::to_string(labels[i]) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
    picks.emplace_back(static_cast<Index>(i), labels[i]);
  }
  Tensor logp = diff::log_softmax_rows(nn::linear_forward(model.classifier(), pooled));
  return diff::neg(diff::mean(diff::gather(logp, picks)));
}

Tensor triplet_loss(const Tensor& pooled, const std::vector<int>& labels, double margin) {
  const Index n = pooled.rows();
  if (static_cast<Index>(labels.size()) != n) {
    throw DimensionError("triplet_loss: label count does not match rows");
  }
  Tensor dist = diff::pairwise_distances(pooled);
  const Matrix& d = dist.value();
  std::vector<std::pair<Index, Index>> pos, negs;
  for (Index i = 0; i < n; ++i) {
    Index hp = -1, hn = -1;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
        if (hp < 0 || d(i, j) > d(i, hp)) hp = j;
      } else if (hn < 0 || d(i, j) < d(i, hn)) {
        hn = j;
      }
    }
    if (hp >= 0 && hn >= 0) {
      pos.emplace_back(i, hp);
      negs.emplace_back(i, hn);
    }
  }
  if (pos.empty()) {
    throw UsageError("triplet_loss: no anchor has both a positive and a negative in the batch");
  }
  Tensor hinge = diff::relu(
      diff::add(diff::sub(diff::gather(dist, pos), diff::gather(dist, negs)), Tensor::scalar(margin)));
  return diff::mean(hinge);
}

Stage1Losses stage1_step(EncoderModel& model, const synth::Dataset& ds,
                         const synth::PkBatch& batch, const nn::OptimizerConfig& optim,
                         double lr_t, double margin) {
  std::vector<Tensor> feats;
  std::vector<int> labels;
  feats.reserve(batch.size());
  for (const auto* list : {&batch.visible, &batch.infrared}) {
    for (std::size_t idx : *list) {
      feats.push_back(encode(model, ds.samples[idx]));
      labels.push_back(ds.samples[idx].identity);
    }
  }
  Tensor pooled = pooled_features(feats);
  Tensor ce = id_loss(model, pooled, labels);
  Tensor tri = triplet_loss(pooled, labels, margin);
  model.params().zero_grads();
  diff::backward(diff::add(ce, tri));
  nn::adamw_step(model.params(), optim, lr_t);
  return {ce.item(), tri.item()};
}

}  // namespace bit::encoder
