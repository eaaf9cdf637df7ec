#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "hotcake/linalg.hpp"
#include "hotcake/rng.hpp"
#include "hotcake/tensor.hpp"

namespace hotcake::tucker {

/// Core tensor plus one factor per mode. Modes that were not
/// decomposed carry an identity flag and an empty factor; their core
/// dimension stays at the original size.
struct TuckerFactors {
  DenseTensor core;
  std::vector<Matrix> factors;
  std::vector<bool> identity;

  const std::vector<std::size_t>& ranks() const { return core.shape(); }
};

struct HosvdOptions {
  bool use_rsvd = false;
  std::uint64_t seed = 0;
  std::size_t oversample = 10;
  std::size_t power_iters = 2;
  /// Unfoldings wider than this switch to the randomized backend even
  /// when use_rsvd is off.
  std::size_t rsvd_col_threshold = 4096;
};

namespace detail {

inline void check_finite(const DenseTensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw std::invalid_argument("tensor has non-finite entries");
  }
}

/// Leading-rank left singular vectors of a mode unfolding. Falls back
/// to a full SVD when the requested rank exceeds min(rows, cols), so
/// the extra columns come from the orthonormal null basis.
inline Matrix leading_left_vectors(const Matrix& unfolding, std::size_t rank,
                                   const HosvdOptions& opts, std::uint64_t mode_seed) {
  const std::size_t max_thin = std::min(unfolding.rows, unfolding.cols);
  if (rank > max_thin) {
    Eigen::BDCSVD<linalg::EigenRowMajor> solver(linalg::as_eigen(unfolding),
                                                Eigen::ComputeFullU);
    const auto& u = solver.matrixU();
    Matrix out(unfolding.rows, rank);
    for (std::size_t i = 0; i < unfolding.rows; ++i)
      for (std::size_t j = 0; j < rank; ++j)
        out(i, j) = u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    for (std::size_t c = 0; c < rank; ++c) {
      double best = 0.0;
      for (std::size_t i = 0; i < out.rows; ++i) {
        if (std::abs(out(i, c)) > std::abs(best)) best = out(i, c);
      }
      if (best < 0.0) {
        for (std::size_t i = 0; i < out.rows; ++i) out(i, c) = -out(i, c);
      }
    }
    return out;
  }

  linalg::SvdResult res;
  if (opts.use_rsvd || unfolding.cols > opts.rsvd_col_threshold) {
    res = linalg::rsvd(unfolding, rank, opts.oversample, opts.power_iters, mode_seed);
  } else {
    res = linalg::truncate(linalg::svd(unfolding), rank);
  }
  return std::move(res.u);
}

}  // namespace detail

/// Truncated HOSVD: for each listed mode the factor is the leading
/// R_k left singular vectors of the mode unfolding; the core is the
/// tensor contracted with all factor transposes. Modes not listed get
/// identity factors and keep their dimension.
inline TuckerFactors hosvd(const DenseTensor& t, std::span<const std::size_t> ranks,
                           std::span<const std::size_t> decompose_modes,
                           const HosvdOptions& opts = {}) {
  const std::size_t d = t.order();
  if (ranks.size() != d) throw std::invalid_argument("hosvd: one rank per mode required");
  detail::check_finite(t);

  std::vector<bool> decompose(d, false);
  for (std::size_t mode : decompose_modes) {
    if (mode >= d) throw std::invalid_argument("hosvd: decompose mode out of range");
    decompose[mode] = true;
  }
  for (std::size_t k = 0; k < d; ++k) {
    if (decompose[k] && (ranks[k] < 1 || ranks[k] > t.dim(k))) {
      throw std::invalid_argument("hosvd: rank out of range for decomposed mode");
    }
  }

  TuckerFactors out;
  out.factors.resize(d);
  out.identity.assign(d, true);

  for (std::size_t k = 0; k < d; ++k) {
    if (!decompose[k]) continue;
    Matrix unfolding = unfold(t, k);
    out.factors[k] = detail::leading_left_vectors(unfolding, ranks[k], opts,
                                                  derive_seed(opts.seed, k));
    out.identity[k] = false;
  }

  DenseTensor core = t;
  for (std::size_t k = 0; k < d; ++k) {
    if (out.identity[k]) continue;
    core = mode_product(core, transpose(out.factors[k]), k);
  }
  out.core = std::move(core);
  return out;
}

inline DenseTensor reconstruct(const TuckerFactors& f) {
  if (f.factors.size() != f.core.order() || f.identity.size() != f.core.order()) {
    throw std::invalid_argument("reconstruct: factor count does not match core order");
  }
  DenseTensor out = f.core;
  for (std::size_t k = 0; k < f.factors.size(); ++k) {
    if (f.identity[k]) continue;
    if (f.factors[k].cols != f.core.dim(k)) {
      throw std::invalid_argument("reconstruct: factor shape inconsistent with core");
    }
    out = mode_product(out, f.factors[k], k);
  }
  return out;
}

/// Relative Frobenius residual ||t - reconstruct(f)|| / ||t||.
inline double approx_error(const DenseTensor& t, const TuckerFactors& f) {
  DenseTensor rec = reconstruct(f);
  if (rec.shape() != t.shape()) throw std::invalid_argument("approx_error: shape mismatch");
  double diff = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    double dv = t[i] - rec[i];
    diff += dv * dv;
  }
  double denom = frobenius_norm(t);
  if (denom == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(diff) / denom;
}

}  // namespace hotcake::tucker
