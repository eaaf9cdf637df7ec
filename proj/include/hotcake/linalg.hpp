#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "hotcake/rng.hpp"
#include "hotcake/tensor.hpp"

namespace hotcake::linalg {

using EigenRowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const EigenRowMajor> as_eigen(const Matrix& m) {
  return Eigen::Map<const EigenRowMajor>(m.data.data(),
                                         static_cast<Eigen::Index>(m.rows),
                                         static_cast<Eigen::Index>(m.cols));
}

inline Matrix from_eigen(const EigenRowMajor& e) {
  Matrix m(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
  Eigen::Map<EigenRowMajor>(m.data.data(), e.rows(), e.cols()) = e;
  return m;
}

/// Thin SVD m = U * diag(S) * Vt with S nonincreasing. U has
/// orthonormal columns, Vt orthonormal rows.
struct SvdResult {
  Matrix u;
  std::vector<double> s;
  Matrix vt;

  std::size_t rank() const { return s.size(); }
};

namespace detail {

inline void check_finite(const Matrix& m) {
  for (double v : m.data) {
    if (!std::isfinite(v)) throw std::invalid_argument("matrix has non-finite entries");
  }
}

/// Makes the largest-magnitude entry of every U column nonnegative,
/// flipping the matching Vt row to keep the product unchanged.
inline void canonicalize_signs(SvdResult& r) {
  for (std::size_t c = 0; c < r.s.size(); ++c) {
    double best = 0.0;
    for (std::size_t i = 0; i < r.u.rows; ++i) {
      double v = r.u(i, c);
      if (std::abs(v) > std::abs(best)) best = v;
    }
    if (best < 0.0) {
      for (std::size_t i = 0; i < r.u.rows; ++i) r.u(i, c) = -r.u(i, c);
      if (c < r.vt.rows) {
        for (std::size_t j = 0; j < r.vt.cols; ++j) r.vt(c, j) = -r.vt(c, j);
      }
    }
  }
}

inline SvdResult from_eigen_svd(const Eigen::BDCSVD<EigenRowMajor>& svd) {
  SvdResult out;
  const auto& u = svd.matrixU();
  const auto& v = svd.matrixV();
  const auto& s = svd.singularValues();
  out.u = Matrix(static_cast<std::size_t>(u.rows()), static_cast<std::size_t>(u.cols()));
  out.vt = Matrix(static_cast<std::size_t>(v.cols()), static_cast<std::size_t>(v.rows()));
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    for (Eigen::Index j = 0; j < u.cols(); ++j)
      out.u(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = u(i, j);
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j)
      out.vt(static_cast<std::size_t>(j), static_cast<std::size_t>(i)) = v(i, j);
  out.s.assign(s.data(), s.data() + s.size());
  return out;
}

/// Thin orthonormal basis of the column span via Householder QR.
inline EigenRowMajor orthonormalize(const EigenRowMajor& y) {
  Eigen::HouseholderQR<EigenRowMajor> qr(y);
  EigenRowMajor q = EigenRowMajor::Identity(y.rows(), y.cols());
  q = qr.householderQ() * q;
  return q;
}

}  // namespace detail

inline SvdResult svd(const Matrix& m) {
  if (m.rows == 0 || m.cols == 0) throw std::invalid_argument("svd: empty matrix");
  detail::check_finite(m);
  Eigen::BDCSVD<EigenRowMajor> solver(as_eigen(m), Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdResult out = detail::from_eigen_svd(solver);
  detail::canonicalize_signs(out);
  return out;
}

inline SvdResult truncate(const SvdResult& res, std::size_t rank) {
  if (rank == 0 || rank > res.rank()) throw std::invalid_argument("truncate: rank out of range");
  SvdResult out;
  out.s.assign(res.s.begin(), res.s.begin() + static_cast<std::ptrdiff_t>(rank));
  out.u = Matrix(res.u.rows, rank);
  for (std::size_t i = 0; i < res.u.rows; ++i)
    for (std::size_t j = 0; j < rank; ++j) out.u(i, j) = res.u(i, j);
  out.vt = Matrix(rank, res.vt.cols);
  for (std::size_t i = 0; i < rank; ++i)
    for (std::size_t j = 0; j < res.vt.cols; ++j) out.vt(i, j) = res.vt(i, j);
  return out;
}

/// Randomized SVD (Gaussian range finder with power iterations).
/// Deterministic for a fixed seed; with the default oversampling and
/// power iterations the leading singular values of matrices with a
/// clear spectral gap match the exact SVD to ~1e-6 relative.
inline SvdResult rsvd(const Matrix& m, std::size_t rank, std::size_t oversample = 10,
                      std::size_t power_iters = 2, std::uint64_t seed = 0) {
  if (m.rows == 0 || m.cols == 0) throw std::invalid_argument("rsvd: empty matrix");
  if (rank < 1 || rank > std::min(m.rows, m.cols)) {
    throw std::invalid_argument("rsvd: target rank out of range");
  }
  detail::check_finite(m);

  // Work on the transpose when the matrix is wide-side-up, swapping
  // U/V in the result.
  if (m.rows < m.cols) {
    SvdResult t = rsvd(transpose(m), rank, oversample, power_iters, seed);
    SvdResult out;
    out.s = t.s;
    out.u = transpose(t.vt);
    out.vt = transpose(t.u);
    detail::canonicalize_signs(out);
    return out;
  }

  const std::size_t k = std::min(rank + oversample, std::min(m.rows, m.cols));
  auto a = as_eigen(m);

  EigenRowMajor omega(static_cast<Eigen::Index>(m.cols), static_cast<Eigen::Index>(k));
  CounterRng rng(seed);
  for (Eigen::Index i = 0; i < omega.rows(); ++i)
    for (Eigen::Index j = 0; j < omega.cols(); ++j) omega(i, j) = rng.next_gaussian();

  EigenRowMajor q = detail::orthonormalize(a * omega);
  for (std::size_t it = 0; it < power_iters; ++it) {
    EigenRowMajor z = detail::orthonormalize(a.transpose() * q);
    q = detail::orthonormalize(a * z);
  }

  EigenRowMajor b = q.transpose() * a;  // k x cols
  Eigen::BDCSVD<EigenRowMajor> solver(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdResult small = detail::from_eigen_svd(solver);

  SvdResult out;
  out.s.assign(small.s.begin(), small.s.begin() + static_cast<std::ptrdiff_t>(rank));
  EigenRowMajor u_full = q * as_eigen(small.u);
  out.u = Matrix(m.rows, rank);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < rank; ++j)
      out.u(i, j) = u_full(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  out.vt = Matrix(rank, m.cols);
  for (std::size_t i = 0; i < rank; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out.vt(i, j) = small.vt(i, j);
  detail::canonicalize_signs(out);
  return out;
}

}  // namespace hotcake::linalg
