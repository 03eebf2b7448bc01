// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "xatl/error.hpp"

namespace xatl {

using Shape = std::vector<std::size_t>;

/// Contiguous storage aligned for the widest SIMD width Eigen was built for.
/// A fixed base alignment keeps Eigen's peeling, and therefore the
/// floating-point summation order, independent of where the heap put a buffer.
template <class T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

inline constexpr std::size_t kMaxRank = 4;

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

template <class T>
struct dtype_of;
template <>
struct dtype_of<float> {
  static constexpr DType value = DType::kFloat32;
};
template <>
struct dtype_of<double> {
  static constexpr DType value = DType::kFloat64;
};

template <class T>
concept Scalar = std::is_same_v<T, float> || std::is_same_v<T, double>;

inline const char* dtype_name(DType d) { return d == DType::kFloat32 ? "float32" : "float64"; }

inline std::size_t numel_of(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor of rank 1..4. A default-constructed tensor is the
/// empty placeholder (rank 0, no storage) and is never a valid operand.
template <Scalar T>
class Tensor {
 public:
  using value_type = T;
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<RowMat>;
  using ConstMatMap = Eigen::Map<const RowMat>;

  Tensor() = default;

  explicit Tensor(Shape dims, T fill = T(0)) : dims_(std::move(dims)) {
    check_dims(dims_);
    data_.assign(numel_of(dims_), fill);
  }

  Tensor(Shape dims, AlignedVector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims(dims_);
    if (numel_of(dims_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match dims " + shape_str(dims_));
    }
  }

  Tensor(Shape dims, const std::vector<T>& data)
      : Tensor(std::move(dims), AlignedVector<T>(data.begin(), data.end())) {}

  static Tensor zeros(Shape dims) { return Tensor(std::move(dims), T(0)); }
  static Tensor ones(Shape dims) { return Tensor(std::move(dims), T(1)); }

  template <class Rng>
  static Tensor normal(Shape dims, T stddev, Rng& rng) {
    Tensor t(std::move(dims));
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    for (auto& x : t.data_) x = static_cast<T>(dist(rng));
    return t;
  }

  template <class Rng>
  static Tensor uniform(Shape dims, T lo, T hi, Rng& rng) {
    Tensor t(std::move(dims));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& x : t.data_) x = static_cast<T>(dist(rng));
    return t;
  }

  const Shape& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return dims_.empty(); }
  std::size_t last_dim() const { return dims_.back(); }
  std::size_t rows() const { return last_dim() == 0 ? 0 : numel() / last_dim(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  AlignedVector<T>& storage() { return data_; }
  const AlignedVector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

  /// View as a (rows x last_dim) row-major matrix.
  MatMap mat() { return MatMap(data_.data(), rows(), last_dim()); }
  ConstMatMap mat() const { return ConstMatMap(data_.data(), rows(), last_dim()); }

  Tensor reshaped(Shape dims) const {
    Tensor out;
    check_dims(dims);
    if (numel_of(dims) != numel()) {
      throw ShapeError("cannot reshape " + shape_str(dims_) + " to " + shape_str(dims));
    }
    out.dims_ = std::move(dims);
    out.data_ = data_;
    return out;
  }

  template <Scalar U>
  Tensor<U> cast() const {
    AlignedVector<U> d(data_.begin(), data_.end());
    return Tensor<U>(dims_, std::move(d));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T x) { return std::isfinite(x); });
  }

  /// Bitwise equality of dims and payload (distinguishes -0.0 from 0.0).
  bool bit_equal(const Tensor& o) const {
    return dims_ == o.dims_ &&
           (data_.empty() || std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(T)) == 0);
  }

  T max_abs_diff(const Tensor& o) const {
    if (dims_ != o.dims_) {
      throw ShapeError("max_abs_diff: " + shape_str(dims_) + " vs " + shape_str(o.dims_));
    }
    T m = 0;
    for (std::size_t i = 0; i < data_.size(); ++i) m = std::max(m, std::abs(data_[i] - o.data_[i]));
    return m;
  }

 private:
  static void check_dims(const Shape& dims) {
    if (dims.empty() || dims.size() > kMaxRank) {
      throw ShapeError("tensor rank must be in 1..4, got " + std::to_string(dims.size()));
    }
    for (auto d : dims) {
      if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(dims));
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != dims_.size()) throw ShapeError("index rank mismatch");
    std::size_t off = 0, k = 0;
    for (auto i : idx) {
      if (i >= dims_[k]) throw ShapeError("index out of range");
      off = off * dims_[k++] + i;
    }
    return off;
  }

  Shape dims_;
  AlignedVector<T> data_;
};

}  // namespace xatl
