#include "hotcake/conv.hpp"

#include <gtest/gtest.h>

#include "hotcake/fixtures.hpp"
#include "hotcake/pipeline.hpp"
#include "test_util.hpp"

using hotcake::ConvSpec;
using hotcake::DenseTensor;
using hotcake::FeatureMap;
using hotcake::KernelTensor;
using hotcake::Matrix;

namespace {

FeatureMap random_map(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  return FeatureMap(hotcake::fixtures::gaussian_tensor({h, w, c}, seed));
}

FeatureMap conv_via_im2col(const FeatureMap& x, const KernelTensor& k) {
  Matrix patches = hotcake::im2col(x, k.spec);
  Matrix kernel_mat(k.spec.kernel_h * k.spec.kernel_w * k.in_channels(), k.out_channels(),
                    k.tensor.data());
  Matrix y = hotcake::multiply(patches, kernel_mat);
  auto [out_h, out_w] = hotcake::conv_output_dims(k.spec, x.height(), x.width());
  return FeatureMap(DenseTensor({out_h, out_w, k.out_channels()}, std::move(y.data)));
}

/// Merges the articulated stages back into one 4-way kernel.
DenseTensor reconstruct_kernel(const hotcake::DecomposedLayer& dl) {
  std::vector<std::size_t> split{dl.spec.kernel_h, dl.spec.kernel_w};
  for (std::size_t r : dl.ranks.input_ranks) split.push_back(r);
  split.push_back(dl.ranks.output_rank);
  DenseTensor t = hotcake::reshape(dl.core_kernel, split);
  for (std::size_t i = 0; i < dl.input_factors.size(); ++i) {
    const DenseTensor& f = dl.input_factors[i];
    t = hotcake::mode_product(t, Matrix(f.dim(2), f.dim(3), f.data()), 2 + i);
  }
  Matrix out_factor(dl.output_factor.dim(2), dl.output_factor.dim(3), dl.output_factor.data());
  t = hotcake::mode_product(t, hotcake::transpose(out_factor), t.order() - 1);
  return hotcake::reshape(t, {dl.spec.kernel_h, dl.spec.kernel_w, dl.in_channels(),
                              dl.out_channels()});
}

}  // namespace

TEST(Conv2dTest, PointwiseKernelMixesChannels) {
  FeatureMap x = random_map(4, 5, 3, 1);
  KernelTensor k(hotcake::fixtures::gaussian_tensor({1, 1, 3, 2}, 2), ConvSpec{});
  FeatureMap y = hotcake::conv2d(x, k);
  EXPECT_EQ(y.height(), 4u);
  EXPECT_EQ(y.width(), 5u);
  for (std::size_t h = 0; h < 4; ++h)
    for (std::size_t w = 0; w < 5; ++w)
      for (std::size_t c = 0; c < 2; ++c) {
        double expected = 0.0;
        for (std::size_t k1 = 0; k1 < 3; ++k1) {
          expected += x.tensor.at({h, w, k1}) * k.tensor.at({0, 0, k1, c});
        }
        EXPECT_NEAR(y.tensor.at({h, w, c}), expected, 1e-14);
      }
}

TEST(Conv2dTest, CenteredDeltaKernelIsIdentity) {
  FeatureMap x = random_map(6, 6, 2, 3);
  DenseTensor kt({3, 3, 2, 2});
  kt.at({1, 1, 0, 0}) = 1.0;
  kt.at({1, 1, 1, 1}) = 1.0;
  KernelTensor k(kt, ConvSpec{3, 3, 1, 1, 1, 1});
  FeatureMap y = hotcake::conv2d(x, k);
  EXPECT_EQ(y.tensor.shape(), x.tensor.shape());
  EXPECT_LE(testutil::max_abs_diff(y.tensor, x.tensor), 1e-15);
}

TEST(Conv2dTest, MatchesBruteForceOracle) {
  FeatureMap x = random_map(8, 8, 4, 5);
  KernelTensor k(hotcake::fixtures::gaussian_tensor({3, 3, 4, 6}, 7), ConvSpec{3, 3, 1, 1, 0, 0});
  FeatureMap direct = hotcake::conv2d(x, k);
  FeatureMap oracle = testutil::conv2d_oracle(x, k);
  EXPECT_LE(testutil::max_abs_diff(direct.tensor, oracle.tensor), 1e-12);
}

TEST(Conv2dTest, StridedPaddedMatchesOracle) {
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      FeatureMap x = random_map(7, 9, 3, 11 + stride * 2 + pad);
      KernelTensor k(hotcake::fixtures::gaussian_tensor({3, 3, 3, 4}, 13 + pad),
                     ConvSpec{3, 3, stride, stride, pad, pad});
      FeatureMap direct = hotcake::conv2d(x, k);
      FeatureMap oracle = testutil::conv2d_oracle(x, k);
      EXPECT_LE(testutil::max_abs_diff(direct.tensor, oracle.tensor), 1e-12)
          << "stride " << stride << " pad " << pad;
    }
  }
}

TEST(Conv2dTest, ErrorsOnBadInputs) {
  FeatureMap x = random_map(4, 4, 3, 17);
  KernelTensor mismatched(hotcake::fixtures::gaussian_tensor({3, 3, 5, 2}, 19),
                          ConvSpec{3, 3});
  EXPECT_THROW(hotcake::conv2d(x, mismatched), std::invalid_argument);

  KernelTensor too_big(hotcake::fixtures::gaussian_tensor({5, 5, 3, 2}, 23), ConvSpec{5, 5});
  FeatureMap tiny = random_map(3, 3, 3, 29);
  EXPECT_THROW(hotcake::conv2d(tiny, too_big), std::invalid_argument);
}

TEST(Conv2dProperty, Linearity) {
  FeatureMap x1 = random_map(5, 6, 3, 31);
  FeatureMap x2 = random_map(5, 6, 3, 37);
  KernelTensor k(hotcake::fixtures::gaussian_tensor({3, 3, 3, 4}, 41), ConvSpec{3, 3, 1, 1, 1, 1});
  const double alpha = 1.7, beta = -0.6;

  DenseTensor mix({5, 6, 3});
  for (std::size_t i = 0; i < mix.size(); ++i) {
    mix[i] = alpha * x1.tensor[i] + beta * x2.tensor[i];
  }
  FeatureMap lhs = hotcake::conv2d(FeatureMap(mix), k);
  FeatureMap y1 = hotcake::conv2d(x1, k);
  FeatureMap y2 = hotcake::conv2d(x2, k);
  for (std::size_t i = 0; i < lhs.tensor.size(); ++i) {
    EXPECT_NEAR(lhs.tensor[i], alpha * y1.tensor[i] + beta * y2.tensor[i], 1e-12);
  }
}

TEST(Im2colTest, DualPathEquivalence) {
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      FeatureMap x = random_map(8, 7, 4, 43 + stride + pad);
      KernelTensor k(hotcake::fixtures::gaussian_tensor({3, 3, 4, 5}, 47),
                     ConvSpec{3, 3, stride, stride, pad, pad});
      FeatureMap direct = hotcake::conv2d(x, k);
      FeatureMap via = conv_via_im2col(x, k);
      EXPECT_LE(testutil::max_abs_diff(direct.tensor, via.tensor), 1e-12);
    }
  }
}

TEST(Im2colTest, PointwiseSpecFlattensInput) {
  FeatureMap x = random_map(4, 3, 5, 53);
  Matrix patches = hotcake::im2col(x, ConvSpec{});
  EXPECT_EQ(patches.rows, 12u);
  EXPECT_EQ(patches.cols, 5u);
  EXPECT_EQ(patches.data, x.tensor.data());
}

TEST(Im2colTest, PaddingChangesRowCount) {
  FeatureMap x = random_map(6, 6, 2, 59);
  ConvSpec no_pad{3, 3, 1, 1, 0, 0};
  ConvSpec padded{3, 3, 1, 1, 1, 1};
  EXPECT_EQ(hotcake::im2col(x, no_pad).rows, 16u);   // (6-3+1)^2
  EXPECT_EQ(hotcake::im2col(x, padded).rows, 36u);   // (6+2-3+1)^2
}

TEST(ForwardDecomposedTest, FullRankMatchesDirectConv) {
  KernelTensor k(hotcake::fixtures::gaussian_tensor({3, 3, 12, 8}, 61),
                 ConvSpec{3, 3, 1, 1, 1, 1});
  hotcake::ChannelFactorization cf = hotcake::factorize_channels(12, 2);
  hotcake::DecomposedLayer dl =
      hotcake::decompose_layer(k, cf, hotcake::HotcakeRanks{cf.branches, 8});
  FeatureMap x = random_map(6, 6, 12, 67);
  FeatureMap reference = hotcake::conv2d(x, k);
  FeatureMap decomposed = hotcake::forward_decomposed(x, dl);
  double scale = testutil::max_abs(reference.tensor);
  EXPECT_LE(testutil::max_abs_diff(reference.tensor, decomposed.tensor), 1e-6 * scale);
}

TEST(ForwardDecomposedTest, FullRankAcrossGeometries) {
  std::uint64_t seed = 100;
  for (std::size_t d : {1u, 3u, 5u}) {
    for (std::size_t stride : {1u, 2u}) {
      for (std::size_t pad : {0u, 1u}) {
        KernelTensor k(hotcake::fixtures::gaussian_tensor({d, d, 8, 6}, ++seed),
                       ConvSpec{d, d, stride, stride, pad, pad});
        hotcake::ChannelFactorization cf = hotcake::factorize_channels(8, 2);
        hotcake::DecomposedLayer dl =
            hotcake::decompose_layer(k, cf, hotcake::HotcakeRanks{cf.branches, 6});
        FeatureMap x = random_map(8, 8, 8, ++seed);
        FeatureMap reference = hotcake::conv2d(x, k);
        FeatureMap decomposed = hotcake::forward_decomposed(x, dl);
        double scale = testutil::max_abs(reference.tensor);
        EXPECT_LE(testutil::max_abs_diff(reference.tensor, decomposed.tensor), 1e-6 * scale)
            << "D=" << d << " stride=" << stride << " pad=" << pad;
      }
    }
  }
}

TEST(ForwardDecomposedTest, SingleBranchMatchesThreeStagePipeline) {
  KernelTensor k(hotcake::fixtures::gaussian_tensor({3, 3, 10, 7}, 71),
                 ConvSpec{3, 3, 1, 1, 1, 1});
  hotcake::DecomposedLayer dl = hotcake::tucker2_decompose(k, 10, 7);
  FeatureMap x = random_map(5, 5, 10, 73);

  // Stage-by-stage: 1x1 input factor, spatial core, 1x1 output factor.
  FeatureMap z = hotcake::conv2d(x, KernelTensor(dl.input_factors[0], ConvSpec{}));
  FeatureMap zp = hotcake::conv2d(z, KernelTensor(dl.core_kernel, dl.spec));
  FeatureMap y_stages = hotcake::conv2d(zp, KernelTensor(dl.output_factor, ConvSpec{}));

  FeatureMap y = hotcake::forward_decomposed(x, dl);
  EXPECT_LE(testutil::max_abs_diff(y.tensor, y_stages.tensor), 1e-12);

  FeatureMap reference = hotcake::conv2d(x, k);
  double scale = testutil::max_abs(reference.tensor);
  EXPECT_LE(testutil::max_abs_diff(y.tensor, reference.tensor), 1e-6 * scale);
}

TEST(ForwardDecomposedTest, TruncatedErrorWithinOperatorBound) {
  KernelTensor k(hotcake::fixtures::gaussian_tensor({3, 3, 12, 10}, 79),
                 ConvSpec{3, 3, 1, 1, 1, 1});
  hotcake::ChannelFactorization cf = hotcake::factorize_channels(12, 2);
  hotcake::DecomposedLayer dl =
      hotcake::decompose_layer(k, cf, hotcake::HotcakeRanks{{2, 3}, 5});

  FeatureMap x = random_map(7, 7, 12, 83);
  FeatureMap y_ref = hotcake::conv2d(x, k);
  FeatureMap y_dec = hotcake::forward_decomposed(x, dl);

  double diff_sq = 0.0;
  for (std::size_t i = 0; i < y_ref.tensor.size(); ++i) {
    double d = y_ref.tensor[i] - y_dec.tensor[i];
    diff_sq += d * d;
  }

  DenseTensor k_hat = reconstruct_kernel(dl);
  double kernel_err_sq = 0.0;
  for (std::size_t i = 0; i < k.tensor.size(); ++i) {
    double d = k.tensor[i] - k_hat[i];
    kernel_err_sq += d * d;
  }
  double patches_norm = hotcake::frobenius_norm(hotcake::im2col(x, k.spec));
  EXPECT_LE(std::sqrt(diff_sq), 1.01 * std::sqrt(kernel_err_sq) * patches_norm);
}

TEST(ForwardDecomposedTest, ChannelMismatchThrows) {
  KernelTensor k(hotcake::fixtures::gaussian_tensor({3, 3, 8, 4}, 89), ConvSpec{3, 3});
  hotcake::ChannelFactorization cf = hotcake::factorize_channels(8, 2);
  hotcake::DecomposedLayer dl =
      hotcake::decompose_layer(k, cf, hotcake::HotcakeRanks{cf.branches, 4});
  FeatureMap bad = random_map(6, 6, 9, 97);
  EXPECT_THROW(hotcake::forward_decomposed(bad, dl), std::invalid_argument);
}
