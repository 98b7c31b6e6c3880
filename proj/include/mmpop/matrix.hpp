#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mmpop/errors.hpp"

namespace mmpop {

/// Dense row-major matrix. Parameters and embeddings are stored as float;
/// the autodiff tape works on the double instantiation.
template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(rows_, cols_));
    }
  }

  /// Builds from nested rows; every row must have the same length.
  static BasicMatrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged rows in matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return BasicMatrix(r, c, std::move(data));
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  template <typename U>
  static BasicMatrix cast(const BasicMatrix<U>& other) {
    BasicMatrix m(other.rows(), other.cols());
    std::transform(other.data().begin(), other.data().end(), m.data_.begin(),
                   [](U v) { return static_cast<T>(v); });
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  std::string shape() const { return shape_string(rows_, cols_); }

  bool same_shape(const BasicMatrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

  static std::string shape_string(std::size_t r, std::size_t c) {
    return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using MatrixD = BasicMatrix<double>;

enum class Activation { relu, tanh };

// Plain (untraced) kernels. The tape reuses them for its forward pass.

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + a.shape() + " * " + b.shape());
  }
  BasicMatrix<T> out(a.rows(), b.cols());
  const std::size_t rows = a.rows(), n = a.cols(), m = b.cols();
  std::size_t i = 0;
  // Four output rows per pass so each row of b is loaded once per block.
  // Every output element still sums over k in ascending order.
  for (; i + 4 <= rows; i += 4) {
    T* __restrict o0 = out.row(i).data();
    T* __restrict o1 = out.row(i + 1).data();
    T* __restrict o2 = out.row(i + 2).data();
    T* __restrict o3 = out.row(i + 3).data();
    for (std::size_t k = 0; k < n; ++k) {
      const T a0 = a(i, k), a1 = a(i + 1, k), a2 = a(i + 2, k), a3 = a(i + 3, k);
      const T* __restrict brow = b.row(k).data();
      for (std::size_t j = 0; j < m; ++j) {
        const T bv = brow[j];
        o0[j] += a0 * bv;
        o1[j] += a1 * bv;
        o2[j] += a2 * bv;
        o3[j] += a3 * bv;
      }
    }
  }
  for (; i < rows; ++i) {
    T* __restrict orow = out.row(i).data();
    const T* arow = a.row(i).data();
    for (std::size_t k = 0; k < n; ++k) {
      const T av = arow[k];
      const T* __restrict brow = b.row(k).data();
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

/// Softmax of every row, shifted by the row max.
template <typename T>
BasicMatrix<T> row_softmax(const BasicMatrix<T>& m) {
  if (m.empty()) throw UsageError("row_softmax of an empty matrix");
  BasicMatrix<T> out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto o = out.row(r);
    const T mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = static_cast<T>(std::exp(static_cast<double>(in[c] - mx)));
      sum += o[c];
    }
    for (auto& v : o) v = static_cast<T>(v / sum);
  }
  return out;
}

template <typename T>
BasicMatrix<T> activation(Activation kind, const BasicMatrix<T>& m) {
  BasicMatrix<T> out(m.rows(), m.cols());
  auto src = m.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = kind == Activation::relu ? (src[i] > T{0} ? src[i] : T{0}) : std::tanh(src[i]);
  }
  return out;
}

/// Mean of squared elementwise differences, accumulated in double.
template <typename T>
double mse_loss(const BasicMatrix<T>& pred, const BasicMatrix<T>& target) {
  if (!pred.same_shape(target)) {
    throw ShapeError("mse_loss shape mismatch: " + pred.shape() + " vs " + target.shape());
  }
  if (pred.empty()) throw UsageError("mse_loss of empty matrices");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

}  // namespace mmpop
