#include "advbench/tensor.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include "advbench/errors.hpp"

namespace advbench {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (int64_t d : shape_) {
    if (d <= 0) throw EngineError("tensor dimension must be positive, got shape " + shape_str(shape_));
  }
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
    throw EngineError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                      shape_str(shape_));
  }
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw EngineError("cannot reshape " + shape_str(shape_) + " to " + shape_str(new_shape));
  }
  return Tensor(std::move(new_shape), data_);
}

bool all_finite(std::span<const float> xs) {
  // A float is finite iff its exponent field is not all ones.
  uint32_t acc = 0;
  for (float x : xs) {
    uint32_t bits = std::bit_cast<uint32_t>(x);
    acc |= static_cast<uint32_t>((bits & 0x7F800000u) == 0x7F800000u);
  }
  return acc == 0;
}

bool Tensor::all_finite() const { return advbench::all_finite(flat()); }

void require_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) throw EngineError("non-finite value in " + what);
}

}  // namespace advbench
