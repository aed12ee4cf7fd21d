#include "bit/cli/gradcheck.hpp"

#include "bit/bci/bci.hpp"
#include "bit/diffcore/ops.hpp"
#include "bit/encoder/encoder.hpp"
#include "bit/nn/layers.hpp"
#include "bit/qascore/qascore.hpp"

#include <functional>

namespace bit::cli {

namespace {

using diff::grad_check;
using diff::grad_check_params;

constexpr double kStep = 1e-6;

Matrix rnd(std::uint64_t seed, Index rows, Index cols, double lo = -1.0, double hi = 1.0) {
  nn::Initializer init(seed);
  Matrix m = init.uniform(rows, cols, 1.0);
  return (m.array() + 1.0) * 0.5 * (hi - lo) + lo;
}

Tensor c(const Matrix& m) { return Tensor::constant(m); }

// Scalar readout with fixed random weights so every output entry matters.
Tensor readout(const Tensor& y, std::uint64_t seed) {
  return diff::sum(diff::mul(y, c(rnd(seed, y.rows(), y.cols()))));
}

using Unary = std::function<Tensor(const Tensor&)>;

double unary(const Unary& op, Index rows, Index cols, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  auto f = [&](const Tensor& x) { return readout(op(x), seed + 100); };
  return grad_check(f, rnd(seed, rows, cols, lo, hi), kStep);
}

// Checks a binary op in both arguments.
double binary(const std::function<Tensor(const Tensor&, const Tensor&)>& op, Index ar, Index ac,
              Index br, Index bc, std::uint64_t seed) {
  const Matrix a = rnd(seed, ar, ac), b = rnd(seed + 1, br, bc);
  const double ea = grad_check([&](const Tensor& x) { return readout(op(x, c(b)), seed + 2); }, a, kStep);
  const double eb = grad_check([&](const Tensor& x) { return readout(op(c(a), x), seed + 2); }, b, kStep);
  return std::max(ea, eb);
}

encoder::EncoderConfig toy_encoder() {
  encoder::EncoderConfig cfg;
  cfg.raw_dim = 3;
  cfg.patches = 3;
  cfg.channels = 4;
  cfg.self_attn_depth = 1;
  cfg.num_train_identities = 3;
  return cfg;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite() {
  std::vector<GradCheckResult> out;
  auto record = [&](std::string name, double err) { out.push_back({std::move(name), err}); };

  record("matmul", binary(diff::matmul, 3, 4, 4, 2, 1));
  record("transpose", unary(diff::transpose, 3, 2, 2));
  record("add", binary(diff::add, 2, 3, 2, 3, 3));
  record("sub", binary(diff::sub, 2, 3, 2, 3, 4));
  record("mul", binary(diff::mul, 2, 3, 2, 3, 5));
  record("scale", unary([](const Tensor& x) { return diff::scale(x, -1.7); }, 2, 3, 6));
  record("neg", unary(diff::neg, 2, 3, 7));
  record("add_row", binary(diff::add_row, 3, 4, 1, 4, 8));
  record("gelu", unary(diff::gelu, 3, 4, 9, -3.0, 3.0));
  record("sigmoid", unary(diff::sigmoid, 3, 4, 10, -4.0, 4.0));
  record("log", unary(diff::log, 3, 4, 11, 0.2, 2.0));
  // Inputs kept away from the kinks.
  record("relu", unary(diff::relu, 3, 4, 12, 0.1, 1.0));
  record("clamp", unary([](const Tensor& x) { return diff::clamp(x, -2.0, 2.0); }, 3, 4, 13));
  record("softmax_rows", unary(diff::softmax_rows, 3, 5, 14, -2.0, 2.0));
  record("log_softmax_rows", unary(diff::log_softmax_rows, 3, 5, 15, -2.0, 2.0));
  {
    const Matrix gamma = rnd(16, 1, 5), beta = rnd(17, 1, 5), x = rnd(18, 3, 5);
    auto ln = [&](const Tensor& a, const Tensor& g, const Tensor& b) { return readout(diff::layer_norm(a, g, b), 19); };
    double e = grad_check([&](const Tensor& t) { return ln(t, c(gamma), c(beta)); }, x, kStep);
    e = std::max(e, grad_check([&](const Tensor& t) { return ln(c(x), t, c(beta)); }, gamma, kStep));
    e = std::max(e, grad_check([&](const Tensor& t) { return ln(c(x), c(gamma), t); }, beta, kStep));
    record("layer_norm", e);
  }
  record("l2_normalize_rows", unary([](const Tensor& x) { return diff::l2_normalize_rows(x); }, 3, 4, 20));
  record("mean_pool_rows", unary(diff::mean_pool_rows, 4, 3, 21));
  record("sum", unary(diff::sum, 3, 3, 22));
  record("mean", unary(diff::mean, 3, 3, 23));
  record("sum_scalars", unary([](const Tensor& x) {
           return diff::sum_scalars({diff::sum(x), diff::scale(diff::mean(x), 3.0), diff::sum(diff::mul(x, x))});
         }, 2, 2, 24));
  record("gather", unary([](const Tensor& x) { return diff::gather(x, {{0, 1}, {2, 0}, {0, 1}}); }, 3, 2, 25));
  record("slice_cols", unary([](const Tensor& x) { return diff::slice_cols(x, 1, 2); }, 3, 4, 26));
  record("hconcat", binary([](const Tensor& a, const Tensor& b) { return diff::hconcat({a, b, a}); }, 2, 3, 2, 1, 27));
  record("vconcat", binary([](const Tensor& a, const Tensor& b) { return diff::vconcat({b, a}); }, 2, 3, 1, 3, 28));
  record("pairwise_distances", unary([](const Tensor& x) { return diff::pairwise_distances(x); }, 4, 3, 29));

  {
    nn::ParameterSet ps;
    nn::Initializer init(30);
    auto att = nn::AttentionParams::create(ps, "att", 4, 1, init);
    const Matrix kv = rnd(31, 5, 4);
    double e = grad_check([&](const Tensor& q) { return readout(bci::cross_attention(att, q, c(kv)), 32); },
                          rnd(33, 3, 4), kStep);
    e = std::max(e, grad_check([&](const Tensor& k) { return readout(bci::cross_attention(att, c(rnd(33, 3, 4)), k), 32); },
                               kv, kStep));
    e = std::max(e, grad_check_params([&] { return readout(bci::cross_attention(att, c(rnd(33, 3, 4)), c(kv)), 32); },
                                      ps.tensors(), kStep));
    record("cross_attention", e);
  }
  {
    nn::ParameterSet ps;
    nn::Initializer init(34);
    auto ffn = nn::FeedForwardBlock::create(ps, "ffn", 3, init);
    const Matrix x = rnd(35, 2, 3);
    double e = grad_check([&](const Tensor& t) { return readout(nn::ffn_forward(ffn, t), 36); }, x, kStep);
    e = std::max(e, grad_check_params([&] { return readout(nn::ffn_forward(ffn, c(x)), 36); }, ps.tensors(), kStep));
    record("ffn", e);
  }
  {
    nn::ParameterSet ps;
    nn::Initializer init(37);
    auto stack = bci::BciStack::create(ps, "bci", bci::BciConfig{1, 4, 1}, init);
    const Matrix fv = rnd(38, 3, 4), fi = rnd(39, 3, 4);
    auto f = [&] {
      auto [v, i] = bci::bci_block_forward(stack.blocks[0], c(fv), c(fi));
      return diff::add(readout(v, 40), readout(i, 41));
    };
    record("bci_block", grad_check_params(f, ps.tensors(), kStep));
  }
  {
    std::vector<int> labels{0, 0, 1, 1, 2};
    auto f = [&](const Tensor& x) {
      return bci::aggregation_contrastive_loss(diff::l2_normalize_rows(x), labels, 0.25);
    };
    record("aggregation_contrastive", grad_check(f, rnd(42, 5, 3), kStep));
  }
  {
    const Matrix fv = rnd(43, 4, 3), fi = rnd(44, 4, 3);
    auto f = [&](const Tensor& sv) {
      qa::SimPair s = qa::similarity_matrices(c(fv), c(fi));
      auto r_vi = qa::topk_filter(s.s_vi.value(), 2), r_iv = qa::topk_filter(s.s_iv.value(), 2);
      qa::MatchSet ms = qa::smooth_complement(qa::mutual_matches(r_vi, r_iv), s.s_vi.value(), 0.2);
      return readout(qa::patch_similarity_vector(ms, sv), 45);
    };
    record("patch_similarity", grad_check(f, qa::similarity_matrices(c(fv), c(fi)).s_vi.value(), kStep));
  }
  {
    nn::ParameterSet ps;
    nn::Initializer init(46);
    auto head = qa::CasmHead::create(ps, "casm", 4, init);
    const Matrix s = rnd(47, 1, 4);
    double e = grad_check([&](const Tensor& t) { return qa::casm_score(head, t); }, s, kStep);
    e = std::max(e, grad_check_params([&] { return qa::casm_score(head, c(s)); }, ps.tensors(), kStep));
    record("casm", e);
  }
  {
    auto f = [](bool y) {
      return [y](const Tensor& psi) { return qa::pair_loss(psi, y); };
    };
    double e = grad_check(f(true), rnd(48, 1, 1, 0.1, 0.9), kStep);
    e = std::max(e, grad_check(f(false), rnd(49, 1, 1, 0.1, 0.9), kStep));
    record("pair_loss", e);
  }
  {
    encoder::EncoderModel model(toy_encoder(), 50);
    std::vector<Matrix> inputs{rnd(51, 3, 3), rnd(52, 3, 3), rnd(53, 3, 3), rnd(54, 3, 3)};
    std::vector<int> labels{0, 0, 1, 2};
    auto f = [&] {
      std::vector<Tensor> feats;
      for (const auto& p : inputs) feats.push_back(encoder::encode(model, p));
      Tensor pooled = encoder::pooled_features(feats);
      return diff::add(encoder::id_loss(model, pooled, labels), encoder::triplet_loss(pooled, labels, 0.3));
    };
    record("stage1_loss", grad_check_params(f, model.params().tensors(), 1e-5));
  }
  {
    qa::MatchingModel model(bci::BciConfig{2, 4, 1}, qa::QaConfig{2, 0.2, 0.6}, 3, 8);
    std::vector<Tensor> vis{c(rnd(55, 3, 4)), c(rnd(56, 3, 4))};
    std::vector<Tensor> ir{c(rnd(57, 3, 4)), c(rnd(58, 3, 4))};
    bci::PairBatch pb = bci::expand_pairs(vis, ir, {0, 1}, {0, 1});
    record("stage2_loss", grad_check_params([&] { return qa::stage2_loss(model, pb, nullptr); },
                                            model.params().tensors(), kStep));
  }
  return out;
}

}  // namespace bit::cli
