// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fsvg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// kExtended (long double) exists only in memory, for gradient-check references.
enum class Precision : unsigned char { kSingle = 0, kDouble = 1, kExtended = 2 };

template <typename T>
constexpr Precision precision_of();
template <>
constexpr Precision precision_of<float>() { return Precision::kSingle; }
template <>
constexpr Precision precision_of<double>() { return Precision::kDouble; }
template <>
constexpr Precision precision_of<long double>() { return Precision::kExtended; }

/// Dense row-major tensor with an optional gradient buffer of the same shape.
///
/// Rank-1 tensors are treated as a single row by rows()/cols(), which is how
/// bias and norm vectors are applied row-wise.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows);
  static Tensor vector(std::initializer_list<T> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;
  static constexpr Precision precision() noexcept { return precision_of<T>(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  std::span<T> grad() noexcept { return grad_; }
  std::span<const T> grad() const noexcept { return grad_; }
  // Allocates the gradient buffer on first use and sets it to zero.
  void zero_grad();
  void clear_grad() noexcept { grad_.clear(); grad_.shrink_to_fit(); }
  // Adds `g` into the gradient buffer, allocating it if absent.
  void accumulate_grad(std::span<const T> g);

  bool all_finite() const noexcept;

  // Same shape, converted element type. Gradients are not copied.
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
};

// Shapes equal and every element has the same bit pattern.
template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template bool bitwise_equal(const Tensor<float>&, const Tensor<float>&);
extern template bool bitwise_equal(const Tensor<double>&, const Tensor<double>&);

}  // namespace fsvg
