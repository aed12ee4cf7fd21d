#include "bit/bci/bci.hpp"

#include "bit/diffcore/ops.hpp"
#include "bit/errors.hpp"

#include <cmath>
#include <limits>

namespace bit::bci {

void BciConfig::validate() const {
  if (T < 0) throw ConfigError("bci config: T must be non-negative");
  if (channels < 1) throw ConfigError("bci config: channels must be positive");
  if (heads < 1 || channels % heads != 0) {
    throw ConfigError("bci config: heads must divide channels");
  }
}

namespace {

StreamBlock make_stream(nn::ParameterSet& params, const std::string& p, const BciConfig& cfg,
                        nn::Initializer& init) {
  StreamBlock s;
  s.ln1 = nn::LayerNormParams::create(params, p + ".ln1", cfg.channels);
  s.attn = nn::AttentionParams::create(params, p + ".attn", cfg.channels, cfg.heads, init);
  s.ln2 = nn::LayerNormParams::create(params, p + ".ln2", cfg.channels);
  s.ffn = nn::FeedForwardBlock::create(params, p + ".ffn", cfg.channels, init);
  return s;
}

Tensor stream_update(const StreamBlock& s, const Tensor& self, const Tensor& other) {
  Tensor h = diff::add(self, cross_attention(s.attn, nn::layer_norm(s.ln1, self),
                                             nn::layer_norm(s.ln1, other)));
  return diff::add(h, nn::ffn_forward(s.ffn, nn::layer_norm(s.ln2, h)));
}

}  // namespace

BciStack BciStack::create(nn::ParameterSet& params, const std::string& prefix,
                          const BciConfig& cfg, nn::Initializer& init) {
  cfg.validate();
  BciStack stack;
  stack.init_v = nn::AttentionParams::create(params, prefix + ".init_v", cfg.channels, cfg.heads, init);
  stack.init_i = nn::AttentionParams::create(params, prefix + ".init_i", cfg.channels, cfg.heads, init);
  for (int t = 0; t < cfg.T; ++t) {
    const std::string p = prefix + ".block" + std::to_string(t);
    stack.blocks.push_back({make_stream(params, p + ".vis", cfg, init),
                            make_stream(params, p + ".ir", cfg, init)});
  }
  return stack;
}

PairBatch expand_pairs(const std::vector<Tensor>& vis, const std::vector<Tensor>& ir,
                       const std::vector<int>& vis_identity, const std::vector<int>& ir_identity) {
  if (vis.size() != ir.size()) {
    throw DimensionError("expand_pairs: " + std::to_string(vis.size()) + " visible vs " +
                         std::to_string(ir.size()) + " infrared samples");
  }
  if (vis_identity.size() != vis.size() || ir_identity.size() != ir.size()) {
    throw DimensionError("expand_pairs: identity count does not match sample count");
  }
  const std::size_t b = vis.size();
  for (std::size_t j = 0; j < b; ++j) {
    if (vis[j].shape() != vis[0].shape() || ir[j].shape() != vis[0].shape()) {
      throw DimensionError("expand_pairs: all feature maps must share one N x C shape");
    }
  }
  PairBatch out;
  for (std::size_t v = 0; v < b; ++v) {
    for (std::size_t i = 0; i < b; ++i) {
      out.visible.push_back(vis[v]);
      out.infrared.push_back(ir[i]);
      out.same_identity.push_back(vis_identity[v] == ir_identity[i]);
      out.vis_idx.push_back(v);
      out.ir_idx.push_back(i);
      out.vis_identity.push_back(vis_identity[v]);
      out.ir_identity.push_back(ir_identity[i]);
    }
  }
  return out;
}

Tensor cross_attention(const nn::AttentionParams& p, const Tensor& q_in, const Tensor& kv_in) {
  if (q_in.cols() != kv_in.cols()) {
    throw DimensionError("cross_attention: query has " + std::to_string(q_in.cols()) +
                         " channels, keys have " + std::to_string(kv_in.cols()));
  }
  return nn::attention(p, q_in, kv_in);
}

StreamPair bci_init(const BciStack& stack, const Tensor& f_v, const Tensor& f_i) {
  return {cross_attention(stack.init_v, f_v, f_i), cross_attention(stack.init_i, f_i, f_v)};
}

StreamPair bci_block_forward(const BciBlock& block, const Tensor& f_v, const Tensor& f_i) {
  if (f_v.shape() != f_i.shape()) throw DimensionError("bci_block_forward: stream shapes differ");
  return {stream_update(block.visible, f_v, f_i), stream_update(block.infrared, f_i, f_v)};
}

StreamPair bci_stack_forward(const BciStack& stack, const Tensor& f_v, const Tensor& f_i) {
  StreamPair s = bci_init(stack, f_v, f_i);
  for (const auto& blk : stack.blocks) s = bci_block_forward(blk, s.first, s.second);
  return s;
}

Tensor pooled_pair_features(const std::vector<StreamPair>& outputs, const PairBatch& pairs,
                            std::vector<int>& labels) {
  if (outputs.size() != pairs.size()) {
    throw DimensionError("pooled_pair_features: output count does not match pair count");
  }
  std::vector<Tensor> rows;
  rows.reserve(2 * outputs.size());
  labels.clear();
  for (std::size_t p = 0; p < outputs.size(); ++p) {
    rows.push_back(diff::mean_pool_rows(outputs[p].first));
    rows.push_back(diff::mean_pool_rows(outputs[p].second));
    labels.push_back(pairs.vis_identity[p]);
    labels.push_back(pairs.ir_identity[p]);
  }
  return diff::l2_normalize_rows(diff::vconcat(rows));
}

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Loss on a precomputed logit matrix s (M x M); row i is anchor i.
Tensor contrastive_from_logits(const Tensor& logits, const std::vector<int>& labels) {
  const Matrix& s = logits.value();
  const Index m = s.rows();
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  // Per anchor: log-sum-exp over negatives and the softmax weights inside it.
  Eigen::VectorXd lse_neg = Eigen::VectorXd::Constant(m, kNegInf);
  Matrix neg_softmax = Matrix::Zero(m, m);
  std::vector<Index> npos(static_cast<std::size_t>(m), 0);
  Index anchors = 0;
  for (Index i = 0; i < m; ++i) {
    double mx = kNegInf;
    for (Index j = 0; j < m; ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) ++npos[i];
      else mx = std::max(mx, s(i, j));
    }
    if (npos[i] > 0) ++anchors;
    if (mx == kNegInf) continue;
    double z = 0.0;
    for (Index j = 0; j < m; ++j) {
      if (j != i && labels[j] != labels[i]) {
        neg_softmax(i, j) = std::exp(s(i, j) - mx);
        z += neg_softmax(i, j);
      }
    }
    neg_softmax.row(i) /= z;
    lse_neg(i) = mx + std::log(z);
  }
  if (anchors == 0) {
    throw UsageError("aggregation_contrastive_loss: no anchor has a positive in the batch");
  }

  double total = 0.0;
  for (Index i = 0; i < m; ++i) {
    if (npos[i] == 0 || lse_neg(i) == kNegInf) continue;
    double row = 0.0;
    for (Index p = 0; p < m; ++p) {
      if (p != i && labels[p] == labels[i]) row += softplus(lse_neg(i) - s(i, p));
    }
    total += row / static_cast<double>(npos[i]);
  }
  Matrix out = Matrix::Constant(1, 1, total / static_cast<double>(anchors));

  return Tensor::from_op(
      "aggregation_contrastive", std::move(out), {logits},
      [s, labels, lse_neg = std::move(lse_neg), neg_softmax = std::move(neg_softmax),
       npos = std::move(npos), anchors](const Matrix& g, std::span<Matrix* const> in) {
        if (!in[0]) return;
        const Index m = s.rows();
        for (Index i = 0; i < m; ++i) {
          if (npos[i] == 0 || std::isinf(lse_neg(i))) continue;
          const double scale = g(0, 0) / (static_cast<double>(npos[i]) * anchors);
          double neg_weight = 0.0;
          for (Index p = 0; p < m; ++p) {
            if (p == i || labels[p] != labels[i]) continue;
            const double w = sigmoid(lse_neg(i) - s(i, p));
            (*in[0])(i, p) -= scale * w;
            neg_weight += w;
          }
          in[0]->row(i) += (scale * neg_weight) * neg_softmax.row(i);
        }
      });
}

}  // namespace

Tensor aggregation_contrastive_loss(const Tensor& pooled, const std::vector<int>& labels,
                                    double tau) {
  if (pooled.rows() < 2) throw UsageError("aggregation_contrastive_loss: need at least 2 rows");
  if (static_cast<Index>(labels.size()) != pooled.rows()) {
    throw DimensionError("aggregation_contrastive_loss: label count does not match rows");
  }
  if (!(tau > 0)) throw UsageError("aggregation_contrastive_loss: tau must be positive");
  Tensor logits = diff::scale(diff::matmul(pooled, diff::transpose(pooled)), 1.0 / tau);
  return contrastive_from_logits(logits, labels);
}

}  // namespace bit::bci
