#pragma once

#include "bit/diffcore/tensor.hpp"
#include "bit/nn/parameters.hpp"

#include <optional>
#include <string>

namespace bit::nn {

struct LinearLayer {
  Tensor weight;                ///< C_in x C_out
  std::optional<Tensor> bias;   ///< 1 x C_out

  Index in_features() const { return weight.rows(); }
  Index out_features() const { return weight.cols(); }

  /// Glorot-uniform weights, zero bias, registered under `<prefix>.weight` / `<prefix>.bias`.
  static LinearLayer create(ParameterSet& params, const std::string& prefix, Index in, Index out,
                            Initializer& init, bool with_bias = true);
};

/// x W (+ b), applied to every row of x.
Tensor linear_forward(const LinearLayer& layer, const Tensor& x);

/// Two-layer MLP with a 4x hidden expansion and GELU in between.
struct FeedForwardBlock {
  LinearLayer lin1;
  LinearLayer lin2;

  static FeedForwardBlock create(ParameterSet& params, const std::string& prefix, Index channels,
                                 Initializer& init);
};

Tensor ffn_forward(const FeedForwardBlock& block, const Tensor& x);

/// Affine parameters of a layer norm over C channels (gamma = 1, beta = 0 at creation).
struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  static LayerNormParams create(ParameterSet& params, const std::string& prefix, Index channels);
};

Tensor layer_norm(const LayerNormParams& ln, const Tensor& x);

/// Bias-free query/key/value projections.
struct AttentionParams {
  Tensor wq;
  Tensor wk;
  Tensor wv;
  int heads = 1;

  Index channels() const { return wq.rows(); }

  static AttentionParams create(ParameterSet& params, const std::string& prefix, Index channels,
                                int heads, Initializer& init);
};

/// softmax((Q Wq)(K Wk)^T / sqrt(d)) (K Wv), with K = V = `kv_in`.
///
/// For one head d = C. With H heads the channels are split into H slices of
/// C/H, each slice attends with d = C/H, and the slices are concatenated.
Tensor attention(const AttentionParams& p, const Tensor& q_in, const Tensor& kv_in);

}  // namespace bit::nn
