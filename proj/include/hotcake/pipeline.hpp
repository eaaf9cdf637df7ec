#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "hotcake/conv.hpp"
#include "hotcake/rng.hpp"
#include "hotcake/tensor.hpp"
#include "hotcake/tucker.hpp"
#include "hotcake/vbmf.hpp"

namespace hotcake {

/// Input-channel branch dimensions [K_11, ..., K_1l], nondecreasing,
/// multiplying to the original channel count.
struct ChannelFactorization {
  std::vector<std::size_t> branches;

  std::size_t branch_count() const { return branches.size(); }
  std::size_t product() const {
    return std::accumulate(branches.begin(), branches.end(), std::size_t{1},
                           std::multiplies<>());
  }
};

/// Tucker ranks of the articulated layer: one rank per channel
/// sub-mode plus the output-channel rank.
struct HotcakeRanks {
  std::vector<std::size_t> input_ranks;
  std::size_t output_rank = 0;
};

/// The articulated convolution: l pointwise sub-mode factors, one
/// spatial core with the original geometry, one pointwise output
/// factor, plus provenance from the decomposition run.
struct DecomposedLayer {
  std::vector<DenseTensor> input_factors;  // factor i: [1,1,K_1i,R_3i]
  DenseTensor core_kernel;                 // [Dh,Dw,prod R_3i,R_4]
  DenseTensor output_factor;               // [1,1,R_4,K2]
  ConvSpec spec;
  ChannelFactorization channel_factorization;
  HotcakeRanks ranks;
  double approx_error = 0.0;
  std::uint64_t seed = 0;

  std::size_t in_channels() const { return channel_factorization.product(); }
  std::size_t out_channels() const { return output_factor.dim(3); }
  std::size_t core_in_channels() const { return core_kernel.dim(2); }
};

/// Splits K1 into l branch dimensions by greedily packing its prime
/// factors into the currently smallest branch, then sorting ascending.
inline ChannelFactorization factorize_channels(std::size_t k1, std::size_t l) {
  if (k1 < 1 || l < 1) throw std::invalid_argument("factorize_channels: arguments must be >= 1");
  if (l == 1) return ChannelFactorization{{k1}};

  std::vector<std::size_t> primes;
  std::size_t n = k1;
  for (std::size_t p = 2; p * p <= n; ++p) {
    while (n % p == 0) {
      primes.push_back(p);
      n /= p;
    }
  }
  if (n > 1) primes.push_back(n);
  if (primes.size() < l) {
    throw std::invalid_argument("factorize_channels: K1 has no factorization into " +
                                std::to_string(l) + " parts >= 2");
  }

  std::sort(primes.rbegin(), primes.rend());
  std::vector<std::size_t> branches(l, 1);
  for (std::size_t p : primes) {
    auto smallest = std::min_element(branches.begin(), branches.end());
    *smallest *= p;
  }
  std::sort(branches.begin(), branches.end());
  return ChannelFactorization{std::move(branches)};
}

/// Splits the input-channel mode of a 4-way kernel into the branch
/// sub-modes: [Dh,Dw,K1,K2] -> [Dh,Dw,K_11,...,K_1l,K2]. A pure
/// row-major reshape; K_11 is the slowest-varying sub-index.
inline DenseTensor reshape_kernel(const KernelTensor& k, const ChannelFactorization& cf) {
  if (cf.product() != k.in_channels()) {
    throw std::invalid_argument("reshape_kernel: branch product does not match input channels");
  }
  std::vector<std::size_t> shape{k.tensor.dim(0), k.tensor.dim(1)};
  shape.insert(shape.end(), cf.branches.begin(), cf.branches.end());
  shape.push_back(k.tensor.dim(3));
  return reshape(k.tensor, std::move(shape));
}

/// Exact parameter counts.
inline std::int64_t param_count(const KernelTensor& k) {
  return static_cast<std::int64_t>(k.tensor.size());
}

inline std::int64_t param_count(std::span<const std::size_t> branches,
                                std::span<const std::size_t> input_ranks,
                                std::size_t output_rank, std::size_t kernel_h,
                                std::size_t kernel_w, std::size_t out_channels) {
  std::int64_t total = 0;
  std::int64_t core_channels = 1;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    total += static_cast<std::int64_t>(branches[i]) * static_cast<std::int64_t>(input_ranks[i]);
    core_channels *= static_cast<std::int64_t>(input_ranks[i]);
  }
  total += static_cast<std::int64_t>(kernel_h) * static_cast<std::int64_t>(kernel_w) *
           core_channels * static_cast<std::int64_t>(output_rank);
  total += static_cast<std::int64_t>(output_rank) * static_cast<std::int64_t>(out_channels);
  return total;
}

inline std::int64_t param_count(const DecomposedLayer& layer) {
  return param_count(layer.channel_factorization.branches, layer.ranks.input_ranks,
                     layer.ranks.output_rank, layer.spec.kernel_h, layer.spec.kernel_w,
                     layer.out_channels());
}

namespace detail {

/// Input spatial extent consistent with the given output extent.
inline std::size_t conv_input_extent(std::size_t out, std::size_t stride, std::size_t kernel,
                                     std::size_t pad) {
  std::ptrdiff_t in = static_cast<std::ptrdiff_t>((out - 1) * stride + kernel) -
                      2 * static_cast<std::ptrdiff_t>(pad);
  if (out < 1 || in < 1) throw std::invalid_argument("output spatial size inconsistent with conv spec");
  return static_cast<std::size_t>(in);
}

}  // namespace detail

/// Multiply-accumulate counts: each stage contributes its output
/// positions times its kernel volume.
inline std::int64_t flop_estimate(const KernelTensor& k, std::size_t out_h, std::size_t out_w) {
  detail::conv_input_extent(out_h, k.spec.stride_h, k.spec.kernel_h, k.spec.pad_h);
  detail::conv_input_extent(out_w, k.spec.stride_w, k.spec.kernel_w, k.spec.pad_w);
  return static_cast<std::int64_t>(out_h) * static_cast<std::int64_t>(out_w) *
         static_cast<std::int64_t>(k.tensor.size());
}

inline std::int64_t flop_estimate(const DecomposedLayer& layer, std::size_t out_h,
                                  std::size_t out_w) {
  const std::size_t in_h =
      detail::conv_input_extent(out_h, layer.spec.stride_h, layer.spec.kernel_h, layer.spec.pad_h);
  const std::size_t in_w =
      detail::conv_input_extent(out_w, layer.spec.stride_w, layer.spec.kernel_w, layer.spec.pad_w);

  std::int64_t total = 0;
  for (const DenseTensor& f : layer.input_factors) {
    total += static_cast<std::int64_t>(in_h) * static_cast<std::int64_t>(in_w) *
             static_cast<std::int64_t>(f.size());
  }
  total += static_cast<std::int64_t>(out_h) * static_cast<std::int64_t>(out_w) *
           static_cast<std::int64_t>(layer.core_kernel.size());
  total += static_cast<std::int64_t>(out_h) * static_cast<std::int64_t>(out_w) *
           static_cast<std::int64_t>(layer.output_factor.size());
  return total;
}

/// Decomposes a kernel into the articulated stages: HOSVD over the
/// channel sub-modes and the output mode (spatial modes untouched),
/// sub-mode factors tensorized as 1x1 kernels, the output factor
/// transposed, and the core's sub-modes merged back into one channel
/// axis.
inline DecomposedLayer decompose_layer(const KernelTensor& k, const ChannelFactorization& cf,
                                       const HotcakeRanks& ranks,
                                       const tucker::HosvdOptions& opts = {}) {
  const std::size_t l = cf.branch_count();
  if (ranks.input_ranks.size() != l) {
    throw std::invalid_argument("decompose_layer: one input rank per branch required");
  }
  for (std::size_t i = 0; i < l; ++i) {
    if (ranks.input_ranks[i] < 1 || ranks.input_ranks[i] > cf.branches[i]) {
      throw std::invalid_argument("decompose_layer: input rank out of range");
    }
  }
  if (ranks.output_rank < 1 || ranks.output_rank > k.out_channels()) {
    throw std::invalid_argument("decompose_layer: output rank out of range");
  }

  DenseTensor k_new = reshape_kernel(k, cf);
  const std::size_t d = k_new.order();  // 3 + l

  std::vector<std::size_t> tucker_ranks(k_new.shape());
  std::vector<std::size_t> modes;
  for (std::size_t i = 0; i < l; ++i) {
    tucker_ranks[2 + i] = ranks.input_ranks[i];
    modes.push_back(2 + i);
  }
  tucker_ranks[d - 1] = ranks.output_rank;
  modes.push_back(d - 1);

  tucker::TuckerFactors factors = tucker::hosvd(k_new, tucker_ranks, modes, opts);

  DecomposedLayer out;
  out.spec = k.spec;
  out.channel_factorization = cf;
  out.ranks = ranks;
  out.seed = opts.seed;
  out.approx_error = tucker::approx_error(k_new, factors);

  std::size_t core_channels = 1;
  for (std::size_t i = 0; i < l; ++i) {
    const Matrix& u = factors.factors[2 + i];  // K_1i x R_3i, row-major
    out.input_factors.emplace_back(
        std::vector<std::size_t>{1, 1, cf.branches[i], ranks.input_ranks[i]}, u.data);
    core_channels *= ranks.input_ranks[i];
  }

  out.core_kernel = reshape(factors.core, {k.spec.kernel_h, k.spec.kernel_w, core_channels,
                                           ranks.output_rank});

  Matrix out_t = transpose(factors.factors[d - 1]);  // R_4 x K2
  out.output_factor = DenseTensor({1, 1, ranks.output_rank, k.out_channels()},
                                  std::move(out_t.data));
  return out;
}

/// Classic two-mode baseline: HOSVD over input and output channel
/// modes only, giving the 1x1 / DxD / 1x1 three-stage chain.
inline DecomposedLayer tucker2_decompose(const KernelTensor& k, std::size_t r3, std::size_t r4,
                                         const tucker::HosvdOptions& opts = {}) {
  return decompose_layer(k, ChannelFactorization{{k.in_channels()}},
                         HotcakeRanks{{r3}, r4}, opts);
}

/// Runs the articulated stages forward: per-sub-mode pointwise
/// contractions, the spatial core convolution under the original
/// geometry, then the pointwise output factor.
inline FeatureMap forward_decomposed(const FeatureMap& x, const DecomposedLayer& dl) {
  if (x.channels() != dl.in_channels()) {
    throw std::invalid_argument("forward_decomposed: input channels do not match layer");
  }
  const std::size_t l = dl.channel_factorization.branch_count();

  std::vector<std::size_t> split_shape{x.height(), x.width()};
  for (std::size_t b : dl.channel_factorization.branches) split_shape.push_back(b);
  DenseTensor t = reshape(x.tensor, std::move(split_shape));

  std::size_t core_channels = 1;
  for (std::size_t i = 0; i < l; ++i) {
    const DenseTensor& f = dl.input_factors[i];
    if (f.order() != 4 || f.dim(2) != dl.channel_factorization.branches[i]) {
      throw std::invalid_argument("forward_decomposed: malformed input factor");
    }
    Matrix u(f.dim(2), f.dim(3), f.data());
    t = mode_product(t, transpose(u), 2 + i);
    core_channels *= f.dim(3);
  }
  FeatureMap contracted(reshape(t, {x.height(), x.width(), core_channels}));

  FeatureMap core_out = conv2d(contracted, KernelTensor(dl.core_kernel, dl.spec));
  return conv2d(core_out, KernelTensor(dl.output_factor, ConvSpec{}));
}

/// Rank-selection result around the VBMF center.
struct RankSelection {
  HotcakeRanks ranks;
  HotcakeRanks center;
  double rel_error = 0.0;
  std::int64_t params = 0;
  std::size_t combos_evaluated = 0;
  bool budget_infeasible = false;
};

struct SelectOptions {
  std::size_t diameter = 3;
  std::optional<std::int64_t> param_budget;  // default: center-combo params
  bool use_rsvd = false;
  std::uint64_t seed = 0;
  /// Optional custom combo score; defaults to the relative Frobenius
  /// approximation error.
  std::function<double(const HotcakeRanks&, double rel_error, std::int64_t params)> criterion;
};

/// Neighborhood rank search centered on the per-mode VBMF estimates.
/// Every combination in the (clamped) windows is scored; the feasible
/// argmin wins, ties broken by fewer parameters then lexicographically
/// smaller rank vector. An empty feasible set under the budget is
/// flagged and the best-error combination returned instead.
inline RankSelection select_ranks(const DenseTensor& k_new, const SelectOptions& opts = {}) {
  const std::size_t d = k_new.order();
  if (d < 4) throw std::invalid_argument("select_ranks: expected a (3+l)-way kernel tensor");
  if (opts.diameter < 1 || opts.diameter % 2 == 0) {
    throw std::invalid_argument("select_ranks: diameter must be odd and >= 1");
  }
  const std::size_t l = d - 3;
  const std::size_t half = (opts.diameter - 1) / 2;

  std::vector<std::size_t> modes(l + 1);
  for (std::size_t i = 0; i < l; ++i) modes[i] = 2 + i;
  modes[l] = d - 1;

  vbmf::VbmfOptions vb_opts;
  vb_opts.use_rsvd = opts.use_rsvd;
  vb_opts.seed = opts.seed;
  std::vector<std::size_t> centers = vbmf::estimate_tucker_ranks(k_new, modes, vb_opts);

  std::vector<std::size_t> lo(l + 1), hi(l + 1);
  for (std::size_t i = 0; i <= l; ++i) {
    std::size_t dim = k_new.dim(modes[i]);
    lo[i] = centers[i] > half ? centers[i] - half : 1;
    hi[i] = std::min(centers[i] + half, dim);
  }

  // One HOSVD at the window maxima; every combination's error follows
  // from the energy of the matching leading corner of that core, since
  // rank-r factors are the leading columns of the rank-max factors.
  std::vector<std::size_t> max_ranks(k_new.shape());
  for (std::size_t i = 0; i <= l; ++i) max_ranks[modes[i]] = hi[i];
  tucker::HosvdOptions hosvd_opts;
  hosvd_opts.use_rsvd = opts.use_rsvd;
  hosvd_opts.seed = opts.seed;
  tucker::TuckerFactors base = tucker::hosvd(k_new, max_ranks, modes, hosvd_opts);

  const double total_energy = [&] {
    double e = 0.0;
    for (double v : k_new.data()) e += v * v;
    return e;
  }();

  const std::vector<std::size_t>& core_shape = base.core.shape();
  std::vector<std::size_t> core_stride(core_shape.size(), 1);
  for (std::size_t k = core_shape.size(); k-- > 1;) {
    core_stride[k - 1] = core_stride[k] * core_shape[k];
  }

  auto corner_energy = [&](std::span<const std::size_t> combo) {
    // Sums squared core entries whose indices on the searched modes lie
    // below the combo ranks (all of the untouched modes contribute).
    double energy = 0.0;
    const std::vector<double>& data = base.core.data();
    std::vector<std::size_t> limit(core_shape);
    for (std::size_t i = 0; i <= l; ++i) limit[modes[i]] = combo[i];
    std::vector<std::size_t> idx(core_shape.size(), 0);
    for (;;) {
      std::size_t flat = 0;
      for (std::size_t m = 0; m < idx.size(); ++m) flat += idx[m] * core_stride[m];
      energy += data[flat] * data[flat];
      std::size_t m = idx.size();
      for (; m-- > 0;) {
        if (++idx[m] < limit[m]) break;
        idx[m] = 0;
      }
      if (m == static_cast<std::size_t>(-1)) break;
    }
    return energy;
  };

  const std::size_t spatial_h = k_new.dim(0), spatial_w = k_new.dim(1);
  const std::size_t out_channels = k_new.dim(d - 1);
  std::vector<std::size_t> branches(l);
  for (std::size_t i = 0; i < l; ++i) branches[i] = k_new.dim(2 + i);

  auto combo_params = [&](std::span<const std::size_t> combo) {
    return param_count(branches, combo.first(l), combo[l], spatial_h, spatial_w, out_channels);
  };
  auto combo_error = [&](std::span<const std::size_t> combo) {
    if (total_energy == 0.0) return 0.0;
    double residual = std::max(0.0, total_energy - corner_energy(combo));
    return std::sqrt(residual / total_energy);
  };

  std::vector<std::size_t> center_combo(centers);
  const std::int64_t budget = opts.param_budget.value_or(combo_params(center_combo));

  struct Candidate {
    std::vector<std::size_t> combo;
    double score = 0.0;
    double error = 0.0;
    std::int64_t params = 0;
    bool feasible = false;
  };
  std::optional<Candidate> best_feasible;
  std::optional<Candidate> best_any;
  auto better = [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.params != b.params) return a.params < b.params;
    return a.combo < b.combo;
  };

  std::size_t evaluated = 0;
  std::vector<std::size_t> combo(lo);
  for (;;) {
    ++evaluated;
    Candidate cand;
    cand.combo = combo;
    cand.error = combo_error(combo);
    cand.params = combo_params(combo);
    cand.feasible = cand.params <= budget;
    HotcakeRanks as_ranks{std::vector<std::size_t>(combo.begin(), combo.begin() + l), combo[l]};
    cand.score = opts.criterion ? opts.criterion(as_ranks, cand.error, cand.params) : cand.error;
    if (!best_any || better(cand, *best_any)) best_any = cand;
    if (cand.feasible && (!best_feasible || better(cand, *best_feasible))) best_feasible = cand;

    std::size_t i = combo.size();
    for (; i-- > 0;) {
      if (++combo[i] <= hi[i]) break;
      combo[i] = lo[i];
    }
    if (i == static_cast<std::size_t>(-1)) break;
  }

  const Candidate& chosen = best_feasible ? *best_feasible : *best_any;
  RankSelection out;
  out.ranks.input_ranks.assign(chosen.combo.begin(), chosen.combo.begin() + l);
  out.ranks.output_rank = chosen.combo[l];
  out.center.input_ranks.assign(centers.begin(), centers.begin() + l);
  out.center.output_rank = centers[l];
  out.rel_error = chosen.error;
  out.params = chosen.params;
  out.combos_evaluated = evaluated;
  out.budget_infeasible = !best_feasible.has_value();
  return out;
}

/// Per-layer entry of a compression run.
struct LayerReport {
  std::string id;
  std::string status;  // "ok" | "skipped" | "error"
  std::string message;
  std::int64_t original_params = 0;
  std::int64_t compressed_params = 0;
  double compression_ratio = 1.0;
  double approx_error = 0.0;
  std::int64_t flops_original = 0;
  std::int64_t flops_compressed = 0;
  std::vector<std::size_t> branches;
  std::vector<std::size_t> input_ranks;
  std::size_t output_rank = 0;
};

struct CompressionReport {
  std::vector<LayerReport> layers;
  std::int64_t total_original_params = 0;
  std::int64_t total_compressed_params = 0;
  double total_compression_ratio = 1.0;
};

/// Layer ids in descending order of compression ratio (stable, so
/// equal ratios keep their original order).
inline std::vector<std::string> plan_compression_order(const CompressionReport& report) {
  std::vector<const LayerReport*> entries;
  for (const LayerReport& layer : report.layers) entries.push_back(&layer);
  std::stable_sort(entries.begin(), entries.end(), [](const LayerReport* a, const LayerReport* b) {
    return a->compression_ratio > b->compression_ratio;
  });
  std::vector<std::string> order;
  order.reserve(entries.size());
  for (const LayerReport* e : entries) order.push_back(e->id);
  return order;
}

/// One network layer handed to compress_network.
struct NetworkLayer {
  std::string id;
  KernelTensor kernel;
  std::optional<std::vector<std::size_t>> branches;  // overrides config.branches
  std::optional<HotcakeRanks> forced_ranks;          // skips the rank search
  std::optional<std::pair<std::size_t, std::size_t>> output_spatial;
};

struct CompressionConfig {
  std::size_t branches = 2;
  std::size_t diameter = 3;
  bool use_rsvd = false;
  std::uint64_t seed = 0;
  std::size_t skip_min_in_channels = 4;
  std::optional<std::int64_t> param_budget;
  std::size_t threads = 0;  // 0 = hardware concurrency
};

struct CompressionResult {
  CompressionReport report;
  /// Parallel to report.layers; empty for skipped or failed layers.
  std::vector<std::optional<DecomposedLayer>> layers;
};

namespace detail {

inline void run_layer(const NetworkLayer& layer, const CompressionConfig& config,
                      std::uint64_t layer_seed, LayerReport& report,
                      std::optional<DecomposedLayer>& out) {
  const KernelTensor& kernel = layer.kernel;
  report.id = layer.id;
  report.original_params = param_count(kernel);
  report.compressed_params = report.original_params;

  auto spatial = layer.output_spatial.value_or(std::make_pair<std::size_t, std::size_t>(1, 1));
  report.flops_original = flop_estimate(kernel, spatial.first, spatial.second);
  report.flops_compressed = report.flops_original;

  if (kernel.in_channels() < config.skip_min_in_channels ||
      (kernel.spec.kernel_h == 1 && kernel.spec.kernel_w == 1)) {
    report.status = "skipped";
    report.message = "pass-through (input channels below threshold or pointwise layer)";
    return;
  }

  try {
    ChannelFactorization cf =
        layer.branches ? ChannelFactorization{*layer.branches}
                       : factorize_channels(kernel.in_channels(), config.branches);
    if (layer.branches && cf.product() != kernel.in_channels()) {
      throw std::invalid_argument("branch product does not match input channels");
    }

    HotcakeRanks ranks;
    if (layer.forced_ranks) {
      ranks = *layer.forced_ranks;
    } else {
      SelectOptions sel;
      sel.diameter = config.diameter;
      sel.param_budget = config.param_budget;
      sel.use_rsvd = config.use_rsvd;
      sel.seed = layer_seed;
      ranks = select_ranks(reshape_kernel(kernel, cf), sel).ranks;
    }

    tucker::HosvdOptions opts;
    opts.use_rsvd = config.use_rsvd;
    opts.seed = layer_seed;
    DecomposedLayer dl = decompose_layer(kernel, cf, ranks, opts);

    report.status = "ok";
    report.compressed_params = param_count(dl);
    report.compression_ratio =
        static_cast<double>(report.original_params) / static_cast<double>(report.compressed_params);
    report.approx_error = dl.approx_error;
    report.flops_compressed = flop_estimate(dl, spatial.first, spatial.second);
    report.branches = dl.channel_factorization.branches;
    report.input_ranks = dl.ranks.input_ranks;
    report.output_rank = dl.ranks.output_rank;
    out = std::move(dl);
  } catch (const std::exception& e) {
    report.status = "error";
    report.message = e.what();
    report.compressed_params = report.original_params;
    report.compression_ratio = 1.0;
  }
}

}  // namespace detail

/// Compresses every layer independently (in parallel up to
/// config.threads); skipped layers are reported as pass-through and
/// per-layer failures are collected, not fatal. Results keep the
/// input layer order.
inline CompressionResult compress_network(std::span<const NetworkLayer> layers,
                                          const CompressionConfig& config = {}) {
  CompressionResult result;
  result.report.layers.resize(layers.size());
  result.layers.resize(layers.size());

  std::size_t worker_count = config.threads != 0
                                 ? config.threads
                                 : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  worker_count = std::min(worker_count, std::max<std::size_t>(layers.size(), 1));

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= layers.size()) return;
      detail::run_layer(layers[i], config, derive_seed(config.seed, i),
                        result.report.layers[i], result.layers[i]);
    }
  };
  if (worker_count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(worker_count);
    for (std::size_t i = 0; i < worker_count; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  for (const LayerReport& layer : result.report.layers) {
    result.report.total_original_params += layer.original_params;
    result.report.total_compressed_params += layer.compressed_params;
  }
  if (result.report.total_compressed_params > 0) {
    result.report.total_compression_ratio =
        static_cast<double>(result.report.total_original_params) /
        static_cast<double>(result.report.total_compressed_params);
  }
  return result;
}

}  // namespace hotcake
