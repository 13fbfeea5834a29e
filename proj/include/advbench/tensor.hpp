#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace advbench {

// Shape of an n-dimensional array; axes are row-major, slowest first.
using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense n-dimensional array of single-precision reals, row-major.
// Image batches are laid out (N, H, W, C); feature batches (N, F).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-initialized
  Tensor(Shape shape, std::vector<float> data);

  static Tensor full(Shape shape, float value);

  const Shape& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_[i]; }
  size_t rank() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> flat() { return data_; }
  std::span<const float> flat() const { return data_; }
  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  // Same data, new shape; element count must match.
  Tensor reshaped(Shape new_shape) const;
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Fast NaN/Inf scan over a span of floats.
bool all_finite(std::span<const float> xs);

// Throws EngineError naming `what` if t contains NaN or Inf.
void require_finite(const Tensor& t, const std::string& what);

}  // namespace advbench
