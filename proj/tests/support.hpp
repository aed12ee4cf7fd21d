#pragma once

#include "bit/diffcore/tensor.hpp"

#include <cstdint>
#include <random>

namespace bit::testing {

inline Matrix random_matrix(std::mt19937_64& rng, Index rows, Index cols, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

inline Matrix random_matrix(std::uint64_t seed, Index rows, Index cols, double lo = -1.0,
                            double hi = 1.0) {
  std::mt19937_64 rng(seed);
  return random_matrix(rng, rows, cols, lo, hi);
}

}  // namespace bit::testing
