#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "hotcake/linalg.hpp"
#include "hotcake/rng.hpp"
#include "hotcake/tensor.hpp"

namespace hotcake::fixtures {

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                              double scale = 1.0) {
  Matrix m(rows, cols);
  CounterRng rng(seed);
  for (double& v : m.data) v = scale * rng.next_gaussian();
  return m;
}

inline DenseTensor gaussian_tensor(std::vector<std::size_t> shape, std::uint64_t seed,
                                   double scale = 1.0) {
  DenseTensor t(std::move(shape));
  CounterRng rng(seed);
  for (double& v : t.data()) v = scale * rng.next_gaussian();
  return t;
}

/// Orthonormal columns from the QR of a seeded Gaussian matrix, with
/// the R diagonal made positive so the basis is canonical.
inline Matrix random_orthonormal(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  if (cols > rows) throw std::invalid_argument("random_orthonormal: cols must be <= rows");
  Matrix g = gaussian_matrix(rows, cols, seed);
  Eigen::HouseholderQR<linalg::EigenRowMajor> qr(linalg::as_eigen(g));
  linalg::EigenRowMajor q = linalg::EigenRowMajor::Identity(static_cast<Eigen::Index>(rows),
                                                            static_cast<Eigen::Index>(cols));
  q = qr.householderQ() * q;
  linalg::EigenRowMajor r = qr.matrixQR().topRows(static_cast<Eigen::Index>(cols))
                                .triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < q.cols(); ++c) {
    if (r(c, c) < 0.0) q.col(c) = -q.col(c);
  }
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out(i, j) = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return out;
}

/// Low-rank matrix with prescribed singular values plus white noise.
inline Matrix planted_matrix(std::size_t rows, std::size_t cols,
                             std::span<const double> singular_values, double noise_std,
                             std::uint64_t seed) {
  const std::size_t r = singular_values.size();
  if (r > std::min(rows, cols)) throw std::invalid_argument("planted_matrix: too many singular values");
  Matrix m(rows, cols);
  if (r > 0) {
    Matrix u = random_orthonormal(rows, r, derive_seed(seed, 1));
    Matrix v = random_orthonormal(cols, r, derive_seed(seed, 2));
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        double sum = 0.0;
        for (std::size_t k = 0; k < r; ++k) sum += u(i, k) * singular_values[k] * v(j, k);
        m(i, j) = sum;
      }
    }
  }
  if (noise_std > 0.0) {
    CounterRng rng(derive_seed(seed, 3));
    for (double& x : m.data) x += noise_std * rng.next_gaussian();
  }
  return m;
}

/// Tensor with planted multilinear ranks: a Gaussian core expanded by
/// random orthonormal factors on every mode, plus optional white
/// noise. Modes with rank equal to their dimension just get a random
/// rotation.
inline DenseTensor planted_tucker(std::span<const std::size_t> shape,
                                  std::span<const std::size_t> ranks, std::uint64_t seed,
                                  double noise_std = 0.0) {
  if (shape.size() != ranks.size()) {
    throw std::invalid_argument("planted_tucker: one rank per mode required");
  }
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (ranks[k] < 1 || ranks[k] > shape[k]) {
      throw std::invalid_argument("planted_tucker: rank out of range");
    }
  }
  DenseTensor core = gaussian_tensor({ranks.begin(), ranks.end()}, derive_seed(seed, 100));
  std::vector<Matrix> factors;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    factors.push_back(random_orthonormal(shape[k], ranks[k], derive_seed(seed, 200 + k)));
  }
  DenseTensor t = multilinear_product(core, factors);
  if (noise_std > 0.0) {
    CounterRng rng(derive_seed(seed, 300));
    for (double& v : t.data()) v += noise_std * rng.next_gaussian();
  }
  return t;
}

/// The worked 3x3x128x256 kernel: sub-mode structure [8,16] with
/// planted ranks (5, 7, 107) on the channel sub-modes and the output
/// mode, spatial modes untouched, mild white noise on top. Returned as
/// the merged 4-way kernel.
inline DenseTensor example2_kernel(std::uint64_t seed, double noise_std = 5e-3) {
  DenseTensor core = gaussian_tensor({3, 3, 5, 7, 107}, derive_seed(seed, 100));
  std::vector<Matrix> factors{
      identity_matrix(3), identity_matrix(3),
      random_orthonormal(8, 5, derive_seed(seed, 201)),
      random_orthonormal(16, 7, derive_seed(seed, 202)),
      random_orthonormal(256, 107, derive_seed(seed, 203)),
  };
  DenseTensor k_new = multilinear_product(core, factors);
  if (noise_std > 0.0) {
    CounterRng rng(derive_seed(seed, 300));
    for (double& v : k_new.data()) v += noise_std * rng.next_gaussian();
  }
  return reshape(k_new, {3, 3, 128, 256});
}

}  // namespace hotcake::fixtures
