#include "hotcake/tucker.hpp"

#include <gtest/gtest.h>

#include "hotcake/fixtures.hpp"
#include "hotcake/linalg.hpp"
#include "test_util.hpp"

using hotcake::DenseTensor;
using hotcake::Matrix;
using hotcake::tucker::TuckerFactors;

namespace {

/// Tensor with geometrically decaying mode spectra: a Gaussian core
/// whose entries shrink with the sum of indices, rotated by random
/// orthonormal factors.
DenseTensor fast_decay_tensor(const std::vector<std::size_t>& shape, double decay,
                              std::uint64_t seed) {
  DenseTensor core = hotcake::fixtures::gaussian_tensor(shape, hotcake::derive_seed(seed, 1));
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < core.size(); ++flat) {
    std::size_t level = 0;
    for (std::size_t v : idx) level += v;
    core[flat] *= std::pow(decay, static_cast<double>(level));
    for (std::size_t k = shape.size(); k-- > 0;) {
      if (++idx[k] < shape[k]) break;
      idx[k] = 0;
    }
  }
  std::vector<Matrix> rotations;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    rotations.push_back(
        hotcake::fixtures::random_orthonormal(shape[k], shape[k], hotcake::derive_seed(seed, 10 + k)));
  }
  return hotcake::multilinear_product(core, rotations);
}

std::vector<std::size_t> all_modes(std::size_t d) {
  std::vector<std::size_t> modes(d);
  for (std::size_t k = 0; k < d; ++k) modes[k] = k;
  return modes;
}

}  // namespace

TEST(HosvdTest, PlantedRanksReconstructExactly) {
  const std::vector<std::size_t> shape{6, 5, 7};
  const std::vector<std::size_t> ranks{2, 2, 2};
  DenseTensor t = hotcake::fixtures::planted_tucker(shape, ranks, 11);
  TuckerFactors f = hotcake::tucker::hosvd(t, ranks, all_modes(3));
  EXPECT_LE(hotcake::tucker::approx_error(t, f), 1e-9);
  EXPECT_EQ(f.core.shape(), ranks);
}

TEST(HosvdTest, FullRanksAreLossless) {
  DenseTensor t = hotcake::fixtures::gaussian_tensor({4, 5, 3}, 13);
  TuckerFactors f = hotcake::tucker::hosvd(t, t.shape(), all_modes(3));
  EXPECT_LE(hotcake::tucker::approx_error(t, f), 1e-10);
}

TEST(HosvdTest, NoModesGivesIdentityDecomposition) {
  DenseTensor t = hotcake::fixtures::gaussian_tensor({3, 4, 2}, 17);
  TuckerFactors f = hotcake::tucker::hosvd(t, t.shape(), std::vector<std::size_t>{});
  EXPECT_EQ(f.core, t);
  for (bool id : f.identity) EXPECT_TRUE(id);
}

TEST(HosvdTest, PartialModesKeepOtherDimensions) {
  DenseTensor t = hotcake::fixtures::gaussian_tensor({3, 3, 8, 6}, 19);
  std::vector<std::size_t> ranks{3, 3, 4, 2};
  std::vector<std::size_t> modes{2, 3};
  TuckerFactors f = hotcake::tucker::hosvd(t, ranks, modes);
  EXPECT_EQ(f.core.shape(), (std::vector<std::size_t>{3, 3, 4, 2}));
  EXPECT_TRUE(f.identity[0]);
  EXPECT_TRUE(f.identity[1]);
  EXPECT_FALSE(f.identity[2]);
  EXPECT_FALSE(f.identity[3]);
}

TEST(HosvdTest, FactorsHaveOrthonormalColumns) {
  DenseTensor t = hotcake::fixtures::gaussian_tensor({6, 7, 5}, 23);
  std::vector<std::size_t> ranks{4, 3, 5};
  TuckerFactors f = hotcake::tucker::hosvd(t, ranks, all_modes(3));
  for (std::size_t k = 0; k < 3; ++k) {
    Matrix gram = hotcake::multiply(hotcake::transpose(f.factors[k]), f.factors[k]);
    for (std::size_t i = 0; i < gram.rows; ++i)
      for (std::size_t j = 0; j < gram.cols; ++j) {
        EXPECT_LE(std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)), 1e-8);
      }
  }
}

TEST(HosvdTest, SignConventionMakesLargestEntryNonnegative) {
  DenseTensor t = hotcake::fixtures::gaussian_tensor({6, 5, 4}, 29);
  TuckerFactors f = hotcake::tucker::hosvd(t, std::vector<std::size_t>{3, 3, 3}, all_modes(3));
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t c = 0; c < f.factors[k].cols; ++c) {
      double best = 0.0;
      for (std::size_t r = 0; r < f.factors[k].rows; ++r) {
        if (std::abs(f.factors[k](r, c)) > std::abs(best)) best = f.factors[k](r, c);
      }
      EXPECT_GE(best, 0.0);
    }
  }
}

TEST(HosvdTest, InvalidArgumentsThrow) {
  DenseTensor t = hotcake::fixtures::gaussian_tensor({3, 4}, 31);
  std::vector<std::size_t> too_big{5, 4};
  std::vector<std::size_t> zero{0, 4};
  EXPECT_THROW(hotcake::tucker::hosvd(t, too_big, all_modes(2)), std::invalid_argument);
  EXPECT_THROW(hotcake::tucker::hosvd(t, zero, all_modes(2)), std::invalid_argument);
  std::vector<std::size_t> bad_mode{2};
  EXPECT_THROW(hotcake::tucker::hosvd(t, t.shape(), bad_mode), std::invalid_argument);
  DenseTensor nan_t = t;
  nan_t[0] = std::nan("");
  EXPECT_THROW(hotcake::tucker::hosvd(nan_t, t.shape(), all_modes(2)), std::invalid_argument);
}

TEST(ReconstructTest, IdentityFactorsReturnCore) {
  DenseTensor core = hotcake::fixtures::gaussian_tensor({2, 3, 4}, 37);
  TuckerFactors f;
  f.core = core;
  f.factors.resize(3);
  f.identity.assign(3, true);
  EXPECT_EQ(hotcake::tucker::reconstruct(f), core);
}

TEST(ReconstructTest, MatchesSequentialModeProducts) {
  DenseTensor t = hotcake::fixtures::gaussian_tensor({5, 6, 4}, 41);
  std::vector<std::size_t> ranks{3, 4, 2};
  TuckerFactors f = hotcake::tucker::hosvd(t, ranks, all_modes(3));
  DenseTensor rec = hotcake::tucker::reconstruct(f);
  DenseTensor seq = f.core;
  for (std::size_t k = 0; k < 3; ++k) seq = hotcake::mode_product(seq, f.factors[k], k);
  EXPECT_EQ(rec, seq);
}

TEST(ApproxErrorTest, BoundsAndEdgeCases) {
  DenseTensor t = hotcake::fixtures::gaussian_tensor({5, 5, 5}, 43);
  TuckerFactors full = hotcake::tucker::hosvd(t, t.shape(), all_modes(3));
  EXPECT_LE(hotcake::tucker::approx_error(t, full), 1e-10);

  std::vector<std::size_t> ones{1, 1, 1};
  TuckerFactors rank1 = hotcake::tucker::hosvd(t, ones, all_modes(3));
  double err = hotcake::tucker::approx_error(t, rank1);
  EXPECT_GE(err, 0.0);
  EXPECT_LE(err, 1.0);

  DenseTensor zero({2, 2});
  TuckerFactors zf = hotcake::tucker::hosvd(zero, zero.shape(), all_modes(2));
  EXPECT_EQ(hotcake::tucker::approx_error(zero, zf), 0.0);
}

TEST(ApproxErrorProperty, BoundedByModeTailEnergies) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    DenseTensor t = hotcake::fixtures::gaussian_tensor({6, 5, 7}, 5000 + seed);
    std::vector<std::size_t> ranks{4, 3, 5};
    TuckerFactors f = hotcake::tucker::hosvd(t, ranks, all_modes(3));
    double err = hotcake::tucker::approx_error(t, f) * hotcake::frobenius_norm(t);

    double tail_sum = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      std::vector<double> s = hotcake::linalg::svd(hotcake::unfold(t, k)).s;
      for (std::size_t i = ranks[k]; i < s.size(); ++i) tail_sum += s[i] * s[i];
    }
    EXPECT_LE(err * err, tail_sum + 1e-8);
  }
}

TEST(HosvdProperty, NestedRankMonotonicity) {
  DenseTensor t = hotcake::fixtures::gaussian_tensor({6, 6, 6}, 61);
  std::vector<std::size_t> modes = all_modes(3);
  for (std::size_t mode = 0; mode < 3; ++mode) {
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t r = 1; r <= 6; ++r) {
      std::vector<std::size_t> ranks{4, 4, 4};
      ranks[mode] = r;
      double err = hotcake::tucker::approx_error(
          t, hotcake::tucker::hosvd(t, ranks, modes));
      EXPECT_LE(err, prev + 1e-12) << "mode " << mode << " rank " << r;
      prev = err;
    }
  }
}

TEST(HosvdProperty, CoreIsAllOrthogonal) {
  DenseTensor t = hotcake::fixtures::gaussian_tensor({6, 5, 4}, 67);
  TuckerFactors f = hotcake::tucker::hosvd(t, t.shape(), all_modes(3));
  for (std::size_t k = 0; k < 3; ++k) {
    Matrix g = hotcake::unfold(f.core, k);
    Matrix gram = hotcake::multiply(g, hotcake::transpose(g));
    double trace = 0.0;
    for (std::size_t i = 0; i < gram.rows; ++i) trace += gram(i, i);
    for (std::size_t i = 0; i < gram.rows; ++i)
      for (std::size_t j = 0; j < gram.cols; ++j) {
        if (i != j) EXPECT_LE(std::abs(gram(i, j)), 1e-6 * trace);
      }
  }
}

TEST(HosvdProperty, RsvdBackendCloseToExact) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DenseTensor t = fast_decay_tensor({10, 12, 8}, 0.45, 9000 + seed);
    std::vector<std::size_t> ranks{4, 4, 4};
    std::vector<std::size_t> modes = all_modes(3);
    double exact_err =
        hotcake::tucker::approx_error(t, hotcake::tucker::hosvd(t, ranks, modes));
    hotcake::tucker::HosvdOptions opts;
    opts.use_rsvd = true;
    opts.seed = 123 + seed;
    double rsvd_err =
        hotcake::tucker::approx_error(t, hotcake::tucker::hosvd(t, ranks, modes, opts));
    EXPECT_LE(std::abs(rsvd_err - exact_err), 1e-4);
  }
}

TEST(HosvdProperty, ErrorBoundHoldsOnRandomTensors) {
  hotcake::CounterRng shape_rng(321);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::size_t> shape(3);
    std::vector<std::size_t> ranks(3);
    for (std::size_t k = 0; k < 3; ++k) {
      shape[k] = 2 + shape_rng.next_u64() % 6;
      ranks[k] = 1 + shape_rng.next_u64() % shape[k];
    }
    DenseTensor t = hotcake::fixtures::gaussian_tensor(shape, 7000 + trial);
    TuckerFactors f = hotcake::tucker::hosvd(t, ranks, all_modes(3));
    double err = hotcake::tucker::approx_error(t, f) * hotcake::frobenius_norm(t);
    double tail_sum = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      std::vector<double> s = hotcake::linalg::svd(hotcake::unfold(t, k)).s;
      for (std::size_t i = ranks[k]; i < s.size(); ++i) tail_sum += s[i] * s[i];
    }
    EXPECT_LE(err * err, tail_sum + 1e-8);
  }
}
