#pragma once

// Scalar reference implementations shared by the unit and acceptance tests.

#include "bit/qascore/qascore.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

namespace bit::testing {

using qa::IndexPair;
using qa::Neighborhoods;

inline Matrix softmax_rows_oracle(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double mx = x(r, 0);
    for (Index k = 1; k < x.cols(); ++k) mx = std::max(mx, x(r, k));
    double z = 0.0;
    for (Index k = 0; k < x.cols(); ++k) z += std::exp(x(r, k) - mx);
    for (Index k = 0; k < x.cols(); ++k) out(r, k) = std::exp(x(r, k) - mx) / z;
  }
  return out;
}

// Full stable sort of each row; the first k survive.
inline std::vector<std::vector<Index>> topk_oracle(const Matrix& s, int k) {
  std::vector<std::vector<Index>> out;
  for (Index r = 0; r < s.rows(); ++r) {
    std::vector<Index> idx;
    for (Index q = 0; q < s.cols(); ++q) idx.push_back(q);
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return s(r, a) > s(r, b); });
    idx.resize(static_cast<std::size_t>(k));
    out.push_back(idx);
  }
  return out;
}

inline bool contains(const std::vector<Index>& v, Index x) { return std::find(v.begin(), v.end(), x) != v.end(); }

inline std::set<IndexPair> mutual_oracle(const Neighborhoods& r_vi, const Neighborhoods& r_iv) {
  std::set<IndexPair> out;
  const Index n = static_cast<Index>(r_vi.size());
  for (Index p = 0; p < n; ++p)
    for (Index q = 0; q < static_cast<Index>(r_iv.size()); ++q)
      if (contains(r_vi[p], q) && contains(r_iv[q], p)) out.insert({p, q});
  return out;
}

// Scalar reimplementation of the matching vector given mutual pairs and S_vi.
inline std::vector<double> s_hat_oracle(const std::set<IndexPair>& mutual, const Matrix& s_vi, double alpha) {
  std::vector<double> out;
  for (Index p = 0; p < s_vi.rows(); ++p) {
    double sum = 0.0;
    int cnt = 0;
    for (Index q = 0; q < s_vi.cols(); ++q)
      if (mutual.count({p, q})) {
        sum += s_vi(p, q);
        ++cnt;
      }
    if (cnt == 0) {
      Index best = 0;
      for (Index q = 1; q < s_vi.cols(); ++q)
        if (s_vi(p, q) > s_vi(p, best)) best = q;
      sum = alpha * s_vi(p, best);
      cnt = 1;
    }
    out.push_back(sum / cnt);
  }
  return out;
}

inline double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

inline double casm_oracle(const qa::CasmHead& h, const std::vector<double>& s_hat) {
  const Matrix& w1 = h.lin1.weight.value();
  const Matrix& b1 = h.lin1.bias->value();
  const Matrix& w2 = h.lin2.weight.value();
  double logit = h.lin2.bias->value()(0, 0);
  for (Index j = 0; j < w1.cols(); ++j) {
    double a = b1(0, j);
    for (Index p = 0; p < w1.rows(); ++p) a += s_hat[static_cast<std::size_t>(p)] * w1(p, j);
    logit += gelu_scalar(a) * w2(j, 0);
  }
  return 1.0 / (1.0 + std::exp(-logit));
}

inline double cmc_ap_oracle(const std::vector<bool>& hits) {
  double total = 0.0;
  int rel = 0;
  for (std::size_t r = 0; r < hits.size(); ++r) {
    if (!hits[r]) continue;
    int upto = 0;
    for (std::size_t s = 0; s <= r; ++s) upto += hits[s] ? 1 : 0;
    total += static_cast<double>(upto) / static_cast<double>(r + 1);
    ++rel;
  }
  return total / rel;
}

}  // namespace bit::testing
