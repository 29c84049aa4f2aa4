#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "hqdm/error.hpp"

namespace hqdm {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor. `Tensor` (64-bit reals) carries every activation,
/// weight and noise sample; `IntTensor` carries quantized integer payloads.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{});
  BasicTensor(Shape shape, std::vector<T> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }

  /// 2-D element access (rank must be 2).
  T at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using IntTensor = BasicTensor<std::int64_t>;

extern template class BasicTensor<double>;
extern template class BasicTensor<std::int64_t>;

Tensor zeros(Shape shape);
Tensor identity(std::size_t n);
Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

/// Throws NumericError if any element is NaN/Inf; `what` names the producer.
void check_finite(const Tensor& t, const std::string& what);

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& t, Shape new_shape);

/// Standard product of [m x k] and [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T * b without materializing the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& t);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// a += s * b, shapes must match.
void axpy(Tensor& a, double s, const Tensor& b);

double sum(const Tensor& t);
double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
double mse(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& t);

Tensor to_real(const IntTensor& t);

}  // namespace hqdm
