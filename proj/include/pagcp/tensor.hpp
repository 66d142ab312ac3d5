#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pagcp/error.hpp"

namespace pagcp {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Dense row-major (NCHW for activations) tensor backed by an Eigen vector.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(Vector::Zero(numel(shape_))) {}
  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) {
      throw Error(ErrorKind::invalid_argument,
                  "tensor data size " + std::to_string(data_.size()) +
                      " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::int64_t rank() const noexcept { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::int64_t axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::int64_t size() const noexcept { return data_.size(); }

  Vector& data() noexcept { return data_; }
  const Vector& data() const noexcept { return data_; }
  Scalar* raw() noexcept { return data_.data(); }
  const Scalar* raw() const noexcept { return data_.data(); }

  std::span<const Scalar> values() const noexcept {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  /// Bitwise equality of shape and contents.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    if (a.shape_ != b.shape_) return false;
    for (Eigen::Index i = 0; i < a.data_.size(); ++i) {
      if (!bit_equal(a.data_[i], b.data_[i])) return false;
    }
    return true;
  }

 private:
  static bool bit_equal(Scalar x, Scalar y) {
    if constexpr (std::is_floating_point_v<Scalar>) {
      return std::memcmp(&x, &y, sizeof(Scalar)) == 0;
    } else {
      return x == y;
    }
  }

  Shape shape_;
  Vector data_;
};

using TensorF = Tensor<float>;
using TensorI64 = Tensor<std::int64_t>;

/// Copy of `t` keeping only indices `keep` (ascending) along `axis`.
template <typename Scalar>
Tensor<Scalar> take_along_axis(const Tensor<Scalar>& t, std::int64_t axis,
                               std::span<const std::int64_t> keep) {
  const Shape& shape = t.shape();
  if (axis < 0 || axis >= t.rank()) {
    throw Error(ErrorKind::invalid_argument, "axis out of range for shape " + shape_string(shape));
  }
  std::int64_t outer = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  std::int64_t inner = 1;
  for (std::int64_t i = axis + 1; i < t.rank(); ++i) inner *= shape[static_cast<std::size_t>(i)];
  const std::int64_t extent = shape[static_cast<std::size_t>(axis)];

  Shape out_shape = shape;
  out_shape[static_cast<std::size_t>(axis)] = static_cast<std::int64_t>(keep.size());
  Tensor<Scalar> out(out_shape);
  const Scalar* src = t.raw();
  Scalar* dst = out.raw();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t k : keep) {
      if (k < 0 || k >= extent) {
        throw Error(ErrorKind::invalid_argument, "index out of range in take_along_axis");
      }
      std::copy_n(src + (o * extent + k) * inner, inner, dst);
      dst += inner;
    }
  }
  return out;
}

/// Complement of `dropped` within [0, extent), ascending.
std::vector<std::int64_t> kept_indices(std::int64_t extent,
                                       std::span<const std::int64_t> dropped);

}  // namespace pagcp
