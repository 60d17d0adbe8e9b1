#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ccnn {

/// Extents of a rank-4 NCHW tensor.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t size() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  constexpr std::size_t sample() const noexcept { return c * h * w; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string to_string() const;
};

/// Dense row-major NCHW float tensor with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  /// Throws InvalidArgument when data.size() != shape.size().
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& vector() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  float& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  float at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  std::span<float> sample(std::size_t n) noexcept {
    return std::span<float>(data_).subspan(n * shape_.sample(), shape_.sample());
  }
  std::span<const float> sample(std::size_t n) const noexcept {
    return std::span<const float>(data_).subspan(n * shape_.sample(), shape_.sample());
  }

  /// Sum of all elements, accumulated in double.
  double sum() const noexcept;
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{};
  std::vector<float> data_;
};

}  // namespace ccnn
