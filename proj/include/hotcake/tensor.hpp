#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hotcake {

namespace detail {

inline std::size_t shape_product(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline void check_shape(std::span<const std::size_t> shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one mode");
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
  }
}

}  // namespace detail

/// Dense d-way array of doubles in row-major order (last index varies
/// fastest). Scalars are represented as shape {1}. Immutable by
/// convention: operations return new tensors.
class DenseTensor {
 public:
  DenseTensor() = default;

  explicit DenseTensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)) {
    detail::check_shape(shape_);
    data_.assign(detail::shape_product(shape_), 0.0);
  }

  DenseTensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    detail::check_shape(shape_);
    if (data_.size() != detail::shape_product(shape_)) {
      throw std::invalid_argument("tensor data length does not match shape product");
    }
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t order() const { return shape_.size(); }
  std::size_t dim(std::size_t mode) const { return shape_.at(mode); }
  std::size_t size() const { return data_.size(); }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  double operator[](std::size_t flat) const { return data_[flat]; }
  double& operator[](std::size_t flat) { return data_[flat]; }

  /// Multi-index access, mostly for tests and small fixtures.
  double at(std::initializer_list<std::size_t> idx) const {
    return data_[flat_index(idx)];
  }
  double& at(std::initializer_list<std::size_t> idx) {
    return data_[flat_index(idx)];
  }

  bool operator==(const DenseTensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw std::invalid_argument("index arity mismatch");
    std::size_t flat = 0;
    std::size_t k = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[k]) throw std::out_of_range("tensor index out of range");
      flat = flat * shape_[k] + i;
      ++k;
    }
    return flat;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Dense row-major matrix; the carrier for mode-k unfoldings and
/// factor matrices.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> d)
      : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != rows * cols) {
      throw std::invalid_argument("matrix data length does not match rows*cols");
    }
  }

  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }

  bool operator==(const Matrix& other) const {
    return rows == other.rows && cols == other.cols && data == other.data;
  }
};

inline Matrix identity_matrix(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
  }
  return t;
}

/// Plain triple-loop product with fixed reduction order.
inline Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matrix product inner dimensions differ");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.data.data() + k * b.cols;
      double* crow = c.data.data() + i * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

/// Relabels the flat data with a new shape of equal element count.
inline DenseTensor reshape(const DenseTensor& t, std::vector<std::size_t> new_shape) {
  detail::check_shape(new_shape);
  if (detail::shape_product(new_shape) != t.size()) {
    throw std::invalid_argument("reshape: element counts differ");
  }
  return DenseTensor(std::move(new_shape), t.data());
}

/// Rearranges modes: out.shape[k] = t.shape[order[k]] and
/// out(j_1..j_d) = t at the tuple whose entry on mode order[k] is j_k.
inline DenseTensor permute(const DenseTensor& t, std::span<const std::size_t> order) {
  const std::size_t d = t.order();
  if (order.size() != d) throw std::invalid_argument("permute: order arity mismatch");
  std::vector<bool> seen(d, false);
  for (std::size_t m : order) {
    if (m >= d || seen[m]) throw std::invalid_argument("permute: invalid permutation");
    seen[m] = true;
  }

  std::vector<std::size_t> in_stride(d, 1);
  for (std::size_t k = d; k-- > 1;) in_stride[k - 1] = in_stride[k] * t.dim(k);

  std::vector<std::size_t> out_shape(d);
  std::vector<std::size_t> stride_for_out(d);
  for (std::size_t k = 0; k < d; ++k) {
    out_shape[k] = t.dim(order[k]);
    stride_for_out[k] = in_stride[order[k]];
  }

  DenseTensor out(out_shape);
  std::vector<std::size_t> idx(d, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    out[flat] = t[src];
    for (std::size_t k = d; k-- > 0;) {
      ++idx[k];
      src += stride_for_out[k];
      if (idx[k] < out_shape[k]) break;
      src -= idx[k] * stride_for_out[k];
      idx[k] = 0;
    }
  }
  return out;
}

/// Mode-k matricization: rows index mode k, columns enumerate the
/// remaining modes in ascending mode order, row-major. This column
/// ordering is the fixed convention everywhere in the library.
inline Matrix unfold(const DenseTensor& t, std::size_t mode) {
  const std::size_t d = t.order();
  if (mode >= d) throw std::invalid_argument("unfold: mode out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < mode; ++k) outer *= t.dim(k);
  for (std::size_t k = mode + 1; k < d; ++k) inner *= t.dim(k);
  const std::size_t rows = t.dim(mode);

  Matrix m(rows, outer * inner);
  const double* src = t.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < rows; ++r) {
      double* dst = m.data.data() + r * m.cols + o * inner;
      const double* s = src + (o * rows + r) * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] = s[i];
    }
  }
  return m;
}

/// Exact inverse of unfold under the fixed column ordering.
inline DenseTensor fold(const Matrix& m, std::size_t mode, std::vector<std::size_t> shape) {
  detail::check_shape(shape);
  if (mode >= shape.size()) throw std::invalid_argument("fold: mode out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < mode; ++k) outer *= shape[k];
  for (std::size_t k = mode + 1; k < shape.size(); ++k) inner *= shape[k];
  if (m.rows != shape[mode] || m.cols != outer * inner) {
    throw std::invalid_argument("fold: matrix shape inconsistent with target shape");
  }

  DenseTensor t(shape);
  double* dst = t.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < m.rows; ++r) {
      const double* src = m.data.data() + r * m.cols + o * inner;
      double* s = dst + (o * m.rows + r) * inner;
      for (std::size_t i = 0; i < inner; ++i) s[i] = src[i];
    }
  }
  return t;
}

/// Contraction of u against mode k: replaces dimension I_k by u.rows.
inline DenseTensor mode_product(const DenseTensor& t, const Matrix& u, std::size_t mode) {
  const std::size_t d = t.order();
  if (mode >= d) throw std::invalid_argument("mode_product: mode out of range");
  if (u.cols != t.dim(mode)) {
    throw std::invalid_argument("mode_product: matrix columns must match mode dimension");
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < mode; ++k) outer *= t.dim(k);
  for (std::size_t k = mode + 1; k < d; ++k) inner *= t.dim(k);
  const std::size_t old_dim = t.dim(mode);

  std::vector<std::size_t> out_shape = t.shape();
  out_shape[mode] = u.rows;
  DenseTensor out(out_shape);

  const double* src = t.data().data();
  double* dst = out.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src_block = src + o * old_dim * inner;
    double* dst_block = dst + o * u.rows * inner;
    for (std::size_t j = 0; j < u.rows; ++j) {
      double* drow = dst_block + j * inner;
      for (std::size_t r = 0; r < old_dim; ++r) {
        double c = u(j, r);
        if (c == 0.0) continue;
        const double* srow = src_block + r * inner;
        for (std::size_t i = 0; i < inner; ++i) drow[i] += c * srow[i];
      }
    }
  }
  return out;
}

/// Full multilinear product core x_1 U1 x_2 U2 ... x_d Ud.
inline DenseTensor multilinear_product(const DenseTensor& core, std::span<const Matrix> factors) {
  if (factors.size() != core.order()) {
    throw std::invalid_argument("multilinear_product: one factor per mode required");
  }
  DenseTensor out = core;
  for (std::size_t k = 0; k < factors.size(); ++k) {
    if (factors[k].cols != core.dim(k)) {
      throw std::invalid_argument("multilinear_product: factor columns must match core dimension");
    }
    out = mode_product(out, factors[k], k);
  }
  return out;
}

inline double frobenius_norm(const DenseTensor& t) {
  double sum = 0.0;
  for (double v : t.data()) sum += v * v;
  return std::sqrt(sum);
}

inline double frobenius_norm(const Matrix& m) {
  double sum = 0.0;
  for (double v : m.data) sum += v * v;
  return std::sqrt(sum);
}

}  // namespace hotcake
