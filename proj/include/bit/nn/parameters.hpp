#pragma once

#include "bit/diffcore/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace bit::nn {

/// Named trainable tensors plus the AdamW moment buffers that go with them.
class ParameterSet {
 public:
  struct Slot {
    std::string name;
    Tensor value;
    Matrix m;
    Matrix v;
  };

  /// Registers a new trainable leaf. Names must be unique.
  Tensor add(std::string name, Matrix init);

  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }
  std::size_t num_values() const;

  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  std::vector<Tensor> tensors() const;

  void zero_grads();
  /// Number of optimizer updates applied so far.
  std::int64_t step() const { return step_; }
  void advance_step() { ++step_; }

  /// Copies values (not optimizer state) from `other`; names and shapes must match.
  void copy_values_from(const ParameterSet& other);

 private:
  std::vector<Slot> slots_;
  std::int64_t step_ = 0;
};

/// Seeded source of initial weights. Output depends only on the seed.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  /// Uniform in [-limit, limit], using the top 53 bits of each draw.
  double uniform(double limit);
  Matrix uniform(Index rows, Index cols, double limit);
  /// Glorot-uniform: +-sqrt(6 / (fan_in + fan_out)).
  Matrix glorot(Index fan_in, Index fan_out);

 private:
  std::mt19937_64 rng_;
};

}  // namespace bit::nn
