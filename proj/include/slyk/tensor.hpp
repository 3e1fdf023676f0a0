#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "slyk/errors.hpp"

namespace slyk::nn {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

inline std::string to_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// 64-byte aligned storage. Eigen kernels take alignment-dependent paths, so
/// unaligned heap blocks would make results vary with malloc placement.
template <class T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <class T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<MatrixRM<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const MatrixRM<T>>;

/// Dense row-major array with a runtime shape. Images are NCHW.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(numel(shape_), fill) {
    for (int d : shape_) SLYK_EXPECT(d >= 0, "Tensor: negative dimension in " << to_string(shape_));
  }
  Tensor(Shape shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    SLYK_EXPECT(data_.size() == numel(shape_),
                "Tensor: " << data_.size() << " values for shape " << to_string(shape_));
  }
  Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    SLYK_EXPECT(data_.size() == numel(shape_),
                "Tensor: " << data_.size() << " values for shape " << to_string(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  AlignedVector<T>& storage() noexcept { return data_; }
  const AlignedVector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Same data viewed as (rows, cols) where cols is the product of trailing dims.
  MatMap<T> matrix(Eigen::Index rows) {
    return MatMap<T>(data_.data(), rows, rows ? static_cast<Eigen::Index>(data_.size()) / rows : 0);
  }
  ConstMatMap<T> matrix(Eigen::Index rows) const {
    return ConstMatMap<T>(data_.data(), rows, rows ? static_cast<Eigen::Index>(data_.size()) / rows : 0);
  }
  /// 2D view using the leading dimension as rows.
  MatMap<T> matrix() { return matrix(shape_.empty() ? 1 : shape_[0]); }
  ConstMatMap<T> matrix() const { return matrix(shape_.empty() ? 1 : shape_[0]); }

  Tensor reshaped(Shape s) const {
    SLYK_EXPECT(numel(s) == data_.size(), "reshape " << to_string(shape_) << " -> " << to_string(s));
    return Tensor(std::move(s), data_);
  }
  void reshape_inplace(Shape s) {
    SLYK_EXPECT(numel(s) == data_.size(), "reshape " << to_string(shape_) << " -> " << to_string(s));
    shape_ = std::move(s);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void add_(const Tensor& o) {
    SLYK_EXPECT(o.size() == size(), "add_: size mismatch " << to_string(shape_) << " vs " << to_string(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, AlignedVector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

}  // namespace slyk::nn
