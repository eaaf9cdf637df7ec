#pragma once

#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hotcake/tensor.hpp"

namespace hotcake {

/// Spatial geometry of a convolution: kernel extents, stride and
/// zero-padding per side.
struct ConvSpec {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
};

inline void validate(const ConvSpec& spec) {
  if (spec.kernel_h < 1 || spec.kernel_w < 1) {
    throw std::invalid_argument("conv spec: kernel extents must be >= 1");
  }
  if (spec.stride_h < 1 || spec.stride_w < 1) {
    throw std::invalid_argument("conv spec: strides must be >= 1");
  }
}

/// 4-way kernel [Dh, Dw, in_channels, out_channels] plus its conv
/// geometry.
struct KernelTensor {
  DenseTensor tensor;
  ConvSpec spec;

  KernelTensor() = default;
  KernelTensor(DenseTensor t, ConvSpec s) : tensor(std::move(t)), spec(s) {
    validate(spec);
    if (tensor.order() != 4) throw std::invalid_argument("kernel tensor must be 4-way");
    if (tensor.dim(0) != spec.kernel_h || tensor.dim(1) != spec.kernel_w) {
      throw std::invalid_argument("kernel spatial dims disagree with conv spec");
    }
  }

  std::size_t in_channels() const { return tensor.dim(2); }
  std::size_t out_channels() const { return tensor.dim(3); }
};

/// Channel-last activation tensor [H, W, C].
struct FeatureMap {
  DenseTensor tensor;

  FeatureMap() = default;
  explicit FeatureMap(DenseTensor t) : tensor(std::move(t)) {
    if (tensor.order() != 3) throw std::invalid_argument("feature map must be 3-way [H,W,C]");
  }

  std::size_t height() const { return tensor.dim(0); }
  std::size_t width() const { return tensor.dim(1); }
  std::size_t channels() const { return tensor.dim(2); }
};

/// Output spatial dims floor((in + 2*pad - kernel)/stride) + 1; throws
/// when the output would be empty.
inline std::pair<std::size_t, std::size_t> conv_output_dims(const ConvSpec& spec,
                                                            std::size_t in_h,
                                                            std::size_t in_w) {
  validate(spec);
  std::ptrdiff_t span_h = static_cast<std::ptrdiff_t>(in_h) + 2 * static_cast<std::ptrdiff_t>(spec.pad_h) -
                          static_cast<std::ptrdiff_t>(spec.kernel_h);
  std::ptrdiff_t span_w = static_cast<std::ptrdiff_t>(in_w) + 2 * static_cast<std::ptrdiff_t>(spec.pad_w) -
                          static_cast<std::ptrdiff_t>(spec.kernel_w);
  if (span_h < 0 || span_w < 0) throw std::invalid_argument("convolution output would be empty");
  return {static_cast<std::size_t>(span_h) / spec.stride_h + 1,
          static_cast<std::size_t>(span_w) / spec.stride_w + 1};
}

/// Direct cross-correlation (CNN convention, no kernel flip, no bias):
/// Y[p,q,k2] = sum_{a,b,k1} Xpad[p*sh+a, q*sw+b, k1] * K[a,b,k1,k2].
inline FeatureMap conv2d(const FeatureMap& x, const KernelTensor& k) {
  if (x.channels() != k.in_channels()) {
    throw std::invalid_argument("conv2d: input channels do not match kernel");
  }
  const ConvSpec& spec = k.spec;
  auto [out_h, out_w] = conv_output_dims(spec, x.height(), x.width());
  const std::size_t in_h = x.height(), in_w = x.width();
  const std::size_t c_in = k.in_channels(), c_out = k.out_channels();

  DenseTensor out({out_h, out_w, c_out});
  const double* xd = x.tensor.data().data();
  const double* kd = k.tensor.data().data();
  double* yd = out.data().data();

  for (std::size_t p = 0; p < out_h; ++p) {
    for (std::size_t q = 0; q < out_w; ++q) {
      double* acc = yd + (p * out_w + q) * c_out;
      for (std::size_t a = 0; a < spec.kernel_h; ++a) {
        std::ptrdiff_t h = static_cast<std::ptrdiff_t>(p * spec.stride_h + a) -
                           static_cast<std::ptrdiff_t>(spec.pad_h);
        if (h < 0 || h >= static_cast<std::ptrdiff_t>(in_h)) continue;
        for (std::size_t b = 0; b < spec.kernel_w; ++b) {
          std::ptrdiff_t w = static_cast<std::ptrdiff_t>(q * spec.stride_w + b) -
                             static_cast<std::ptrdiff_t>(spec.pad_w);
          if (w < 0 || w >= static_cast<std::ptrdiff_t>(in_w)) continue;
          const double* xrow = xd + (static_cast<std::size_t>(h) * in_w +
                                     static_cast<std::size_t>(w)) * c_in;
          const double* krow = kd + (a * spec.kernel_w + b) * c_in * c_out;
          for (std::size_t k1 = 0; k1 < c_in; ++k1) {
            double xv = xrow[k1];
            if (xv == 0.0) continue;
            const double* kk = krow + k1 * c_out;
            for (std::size_t k2 = 0; k2 < c_out; ++k2) acc[k2] += xv * kk[k2];
          }
        }
      }
    }
  }
  return FeatureMap(std::move(out));
}

/// Patch matrix (output positions x Dh*Dw*C) such that
/// conv2d(x, k) = im2col(x, spec) * reshape(kernel, [Dh*Dw*C, K2]).
inline Matrix im2col(const FeatureMap& x, const ConvSpec& spec) {
  auto [out_h, out_w] = conv_output_dims(spec, x.height(), x.width());
  const std::size_t c_in = x.channels();
  Matrix patches(out_h * out_w, spec.kernel_h * spec.kernel_w * c_in);
  const double* xd = x.tensor.data().data();

  for (std::size_t p = 0; p < out_h; ++p) {
    for (std::size_t q = 0; q < out_w; ++q) {
      double* row = patches.data.data() + (p * out_w + q) * patches.cols;
      for (std::size_t a = 0; a < spec.kernel_h; ++a) {
        std::ptrdiff_t h = static_cast<std::ptrdiff_t>(p * spec.stride_h + a) -
                           static_cast<std::ptrdiff_t>(spec.pad_h);
        for (std::size_t b = 0; b < spec.kernel_w; ++b) {
          std::ptrdiff_t w = static_cast<std::ptrdiff_t>(q * spec.stride_w + b) -
                             static_cast<std::ptrdiff_t>(spec.pad_w);
          double* cell = row + (a * spec.kernel_w + b) * c_in;
          if (h < 0 || h >= static_cast<std::ptrdiff_t>(x.height()) || w < 0 ||
              w >= static_cast<std::ptrdiff_t>(x.width())) {
            continue;  // stays zero (zero padding)
          }
          const double* src = xd + (static_cast<std::size_t>(h) * x.width() +
                                    static_cast<std::size_t>(w)) * c_in;
          for (std::size_t c = 0; c < c_in; ++c) cell[c] = src[c];
        }
      }
    }
  }
  return patches;
}

}  // namespace hotcake
