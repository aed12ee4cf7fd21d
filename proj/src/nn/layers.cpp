#include "bit/nn/layers.hpp"

#include "bit/diffcore/ops.hpp"
#include "bit/errors.hpp"

#include <cmath>

namespace bit::nn {

LinearLayer LinearLayer::create(ParameterSet& params, const std::string& prefix, Index in,
                                Index out, Initializer& init, bool with_bias) {
  LinearLayer layer;
  layer.weight = params.add(prefix + ".weight", init.glorot(in, out));
  if (with_bias) layer.bias = params.add(prefix + ".bias", Matrix::Zero(1, out));
  return layer;
}

Tensor linear_forward(const LinearLayer& layer, const Tensor& x) {
  if (x.cols() != layer.in_features()) {
    throw DimensionError("linear_forward: input has " + std::to_string(x.cols()) +
                         " features, layer expects " + std::to_string(layer.in_features()));
  }
  Tensor y = diff::matmul(x, layer.weight);
  return layer.bias ? diff::add_row(y, *layer.bias) : y;
}

FeedForwardBlock FeedForwardBlock::create(ParameterSet& params, const std::string& prefix,
                                          Index channels, Initializer& init) {
  return {LinearLayer::create(params, prefix + ".lin1", channels, 4 * channels, init),
          LinearLayer::create(params, prefix + ".lin2", 4 * channels, channels, init)};
}

Tensor ffn_forward(const FeedForwardBlock& block, const Tensor& x) {
  return linear_forward(block.lin2, diff::gelu(linear_forward(block.lin1, x)));
}

LayerNormParams LayerNormParams::create(ParameterSet& params, const std::string& prefix,
                                        Index channels) {
  return {params.add(prefix + ".gamma", Matrix::Ones(1, channels)),
          params.add(prefix + ".beta", Matrix::Zero(1, channels))};
}

Tensor layer_norm(const LayerNormParams& ln, const Tensor& x) {
  return diff::layer_norm(x, ln.gamma, ln.beta, ln.eps);
}

AttentionParams AttentionParams::create(ParameterSet& params, const std::string& prefix,
                                        Index channels, int heads, Initializer& init) {
  if (heads < 1 || channels % heads != 0) {
    throw ConfigError("attention: head count " + std::to_string(heads) + " must divide " +
                      std::to_string(channels) + " channels");
  }
  AttentionParams p;
  p.wq = params.add(prefix + ".wq", init.glorot(channels, channels));
  p.wk = params.add(prefix + ".wk", init.glorot(channels, channels));
  p.wv = params.add(prefix + ".wv", init.glorot(channels, channels));
  p.heads = heads;
  return p;
}

namespace {

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, Index dim) {
  Tensor scores = diff::scale(diff::matmul(q, diff::transpose(k)),
                              1.0 / std::sqrt(static_cast<double>(dim)));
  return diff::matmul(diff::softmax_rows(scores), v);
}

}  // namespace

Tensor attention(const AttentionParams& p, const Tensor& q_in, const Tensor& kv_in) {
  const Index c = p.channels();
  if (q_in.cols() != c || kv_in.cols() != c) {
    throw DimensionError("attention: inputs must have " + std::to_string(c) + " channels");
  }
  Tensor q = diff::matmul(q_in, p.wq);
  Tensor k = diff::matmul(kv_in, p.wk);
  Tensor v = diff::matmul(kv_in, p.wv);
  if (p.heads == 1) return attend(q, k, v, c);

  const Index dh = c / p.heads;
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(p.heads));
  for (int h = 0; h < p.heads; ++h) {
    outs.push_back(attend(diff::slice_cols(q, h * dh, dh), diff::slice_cols(k, h * dh, dh),
                          diff::slice_cols(v, h * dh, dh), dh));
  }
  return diff::hconcat(outs);
}

}  // namespace bit::nn
