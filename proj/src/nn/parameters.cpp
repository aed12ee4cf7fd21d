#include "bit/nn/parameters.hpp"

#include "bit/errors.hpp"

#include <algorithm>
#include <cmath>

namespace bit::nn {

Tensor ParameterSet::add(std::string name, Matrix init) {
  if (contains(name)) throw UsageError("duplicate parameter name '" + name + "'");
  if (!diff::all_finite(init)) throw UsageError("parameter '" + name + "' has non-finite entries");
  Slot slot;
  slot.m = Matrix::Zero(init.rows(), init.cols());
  slot.v = Matrix::Zero(init.rows(), init.cols());
  slot.value = Tensor::parameter(std::move(init));
  slot.name = std::move(name);
  slots_.push_back(std::move(slot));
  return slots_.back().value;
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(slots_.begin(), slots_.end(), [&](const Slot& s) { return s.name == name; });
}

const Tensor& ParameterSet::at(std::string_view name) const {
  for (const auto& s : slots_) {
    if (s.name == name) return s.value;
  }
  throw UsageError("unknown parameter '" + std::string(name) + "'");
}

std::size_t ParameterSet::num_values() const {
  std::size_t n = 0;
  for (const auto& s : slots_) n += static_cast<std::size_t>(s.value.size());
  return n;
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(slots_.size());
  for (const auto& s : slots_) out.push_back(s.value);
  return out;
}

void ParameterSet::zero_grads() {
  for (auto& s : slots_) s.value.zero_grad();
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  if (other.size() != size()) throw UsageError("parameter sets differ in size");
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const auto& src = other.slots_[i];
    auto& dst = slots_[i];
    if (src.name != dst.name || src.value.rows() != dst.value.rows() ||
        src.value.cols() != dst.value.cols()) {
      throw UsageError("parameter '" + dst.name + "' does not match '" + src.name + "'");
    }
    dst.value.mutable_value() = src.value.value();
  }
}

double Initializer::uniform(double limit) {
  const double unit = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
  return (2.0 * unit - 1.0) * limit;
}

Matrix Initializer::uniform(Index rows, Index cols, double limit) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(limit);
  return m;
}

Matrix Initializer::glorot(Index fan_in, Index fan_out) {
  return uniform(fan_in, fan_out, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

}  // namespace bit::nn
