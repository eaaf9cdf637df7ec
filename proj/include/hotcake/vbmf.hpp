#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "hotcake/linalg.hpp"
#include "hotcake/rng.hpp"
#include "hotcake/tensor.hpp"

namespace hotcake::vbmf {

/// Result of the analytic empirical-VB rank estimate for one matrix.
struct VbmfEstimate {
  std::size_t rank = 0;
  double noise_variance = 0.0;
  std::vector<double> kept_singular_values;
  double threshold = 0.0;
};

struct VbmfOptions {
  bool use_rsvd = false;
  std::uint64_t seed = 0;
  /// Cap on the candidate rank when use_rsvd is set; the rSVD request
  /// is min(rows, cols, 4 * candidate_max). Defaults to rows.
  std::optional<std::size_t> candidate_max;
};

namespace detail {

/// tau(x; alpha): the positive root of t^2 - (x - 1 - alpha) t + alpha = 0,
/// the EVB shrinkage variable for a normalized squared singular value x
/// above the retention point.
inline double evb_tau(double x, double alpha) {
  double c = x - (1.0 + alpha);
  return 0.5 * (c + std::sqrt(c * c - 4.0 * alpha));
}

/// Empirical-VB free energy as a function of the noise variance, up to
/// sigma2-independent constants. s holds the computed singular values
/// (possibly fewer than l_dim when rSVD was used); residual is the
/// squared Frobenius mass not covered by s.
inline double evb_free_energy(double sigma2, std::size_t l_dim, std::size_t m_dim,
                              std::span<const double> s, double residual) {
  const double alpha = static_cast<double>(l_dim) / static_cast<double>(m_dim);
  const double tau_bar = 2.5129 * std::sqrt(alpha);
  const double x_bar = (1.0 + tau_bar) * (1.0 + alpha / tau_bar);

  double obj = 0.0;
  for (double sv : s) {
    double x = sv * sv / (static_cast<double>(m_dim) * sigma2);
    if (x <= x_bar) {
      obj += x - std::log(x);
    } else {
      double t = evb_tau(x, alpha);
      obj += x - t + std::log((t + 1.0) / x) + alpha * std::log(t / alpha + 1.0);
    }
  }
  obj += residual / (static_cast<double>(m_dim) * sigma2);
  obj += static_cast<double>(l_dim - s.size()) * std::log(sigma2);
  return obj;
}

template <typename F>
double golden_section_min(F&& f, double lo, double hi, double rel_tol) {
  constexpr double inv_phi = 0.6180339887498949;
  double a = lo, b = hi;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while ((b - a) > rel_tol * std::max(std::abs(a), std::abs(b))) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

/// Analytic empirical-VBMF rank estimate: singular spectrum (exact or
/// randomized SVD), 1-D noise-variance search over the bracketed
/// interval (log grid + golden-section refinement), then retention of
/// singular values above the analytic threshold for the matrix aspect
/// ratio.
inline VbmfEstimate estimate_rank(const Matrix& m, const VbmfOptions& opts = {}) {
  if (m.rows == 0 || m.cols == 0) throw std::invalid_argument("estimate_rank: empty matrix");
  linalg::detail::check_finite(m);

  double energy = 0.0;
  for (double v : m.data) energy += v * v;
  if (energy == 0.0) {
    return VbmfEstimate{0, std::numeric_limits<double>::min(), {}, 0.0};
  }

  const std::size_t l_dim = std::min(m.rows, m.cols);
  const std::size_t m_dim = std::max(m.rows, m.cols);

  std::vector<double> s;
  if (opts.use_rsvd) {
    std::size_t cap = opts.candidate_max.value_or(m.rows);
    std::size_t request = std::min({m.rows, m.cols, 4 * std::max<std::size_t>(cap, 1)});
    s = linalg::rsvd(m, request, 10, 2, opts.seed).s;
  } else {
    s = linalg::svd(m).s;
  }

  double spectrum_energy = 0.0;
  for (double sv : s) spectrum_energy += sv * sv;
  const double residual = std::max(0.0, energy - spectrum_energy);

  if (s.empty() || s.front() <= 0.0) {
    return VbmfEstimate{0, std::numeric_limits<double>::min(), {}, 0.0};
  }

  // Bracket: [smallest squared singular value / cols, mean squared
  // singular value], log grid with 200 points, then golden-section.
  const double s_max = s.front();
  const double s_min = s.back();
  double lo = s_min * s_min / static_cast<double>(m.cols);
  const double hi = energy / static_cast<double>(l_dim);
  const double lo_guard = std::max(s_max * s_max * 1e-30, std::numeric_limits<double>::min() * 1e6);
  lo = std::max(lo, lo_guard);
  if (!(lo < hi)) lo = hi * (1.0 - 1e-9);

  auto objective = [&](double sigma2) {
    return detail::evb_free_energy(sigma2, l_dim, m_dim, s, residual);
  };

  constexpr int kGridPoints = 200;
  const double log_lo = std::log(lo), log_hi = std::log(hi);
  int best_idx = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<double> grid(kGridPoints);
  for (int i = 0; i < kGridPoints; ++i) {
    double frac = static_cast<double>(i) / (kGridPoints - 1);
    grid[i] = std::exp(log_lo + frac * (log_hi - log_lo));
    double val = objective(grid[i]);
    if (val < best_val) {
      best_val = val;
      best_idx = i;
    }
  }
  const double bracket_lo = grid[std::max(best_idx - 1, 0)];
  const double bracket_hi = grid[std::min(best_idx + 1, kGridPoints - 1)];
  double sigma2 = bracket_lo < bracket_hi
                      ? detail::golden_section_min(objective, bracket_lo, bracket_hi, 1e-6)
                      : grid[best_idx];
  if (objective(grid[best_idx]) < objective(sigma2)) sigma2 = grid[best_idx];

  const double alpha = static_cast<double>(l_dim) / static_cast<double>(m_dim);
  const double tau_bar = 2.5129 * std::sqrt(alpha);
  const double x_bar = (1.0 + tau_bar) * (1.0 + alpha / tau_bar);
  const double threshold = std::sqrt(static_cast<double>(m_dim) * sigma2 * x_bar);

  // Values at the numerical-noise floor of the spectrum are never
  // retained, whatever the estimated variance.
  const double numerical_floor = s_max * std::numeric_limits<double>::epsilon() *
                                 static_cast<double>(m_dim);

  VbmfEstimate out;
  out.noise_variance = sigma2;
  out.threshold = threshold;
  for (double sv : s) {
    if (sv > threshold && sv > numerical_floor) out.kept_singular_values.push_back(sv);
  }
  out.rank = out.kept_singular_values.size();
  return out;
}

/// Per-mode VBMF ranks for the listed modes of t, each clamped to
/// [1, I_k]. Modes not listed are left untouched by the caller.
inline std::vector<std::size_t> estimate_tucker_ranks(const DenseTensor& t,
                                                      std::span<const std::size_t> modes,
                                                      const VbmfOptions& opts = {}) {
  if (modes.empty()) throw std::invalid_argument("estimate_tucker_ranks: no modes listed");
  std::vector<std::size_t> ranks;
  ranks.reserve(modes.size());
  for (std::size_t mode : modes) {
    if (mode >= t.order()) throw std::invalid_argument("estimate_tucker_ranks: mode out of range");
    VbmfOptions mode_opts = opts;
    mode_opts.seed = derive_seed(opts.seed, mode);
    VbmfEstimate est = estimate_rank(unfold(t, mode), mode_opts);
    ranks.push_back(std::clamp<std::size_t>(est.rank, 1, t.dim(mode)));
  }
  return ranks;
}

}  // namespace hotcake::vbmf
