// Command-line front end: rank estimation, network decomposition,
// forward-equivalence verification, report rendering and fixture
// generation over the binary tensor container and JSON manifests.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hotcake/conv.hpp"
#include "hotcake/fixtures.hpp"
#include "hotcake/io.hpp"
#include "hotcake/pipeline.hpp"
#include "hotcake/vbmf.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitIo = 2;
constexpr int kExitShape = 3;
constexpr int kExitChainBreak = 4;
constexpr double kFullRankTolerance = 1e-6;

std::size_t threads_from_env() {
  const char* env = std::getenv("HOTCAKE_THREADS");
  if (env == nullptr) return 0;
  long v = std::atol(env);
  return v > 0 ? static_cast<std::size_t>(v) : 1;
}

int cmd_ranks(const std::string& tensor_path, std::size_t branches, bool use_rsvd,
              std::uint64_t seed) {
  hotcake::io::LoadedTensor loaded = hotcake::io::read_tensor(tensor_path);
  if (loaded.tensor.order() != 4) {
    throw std::invalid_argument("ranks: expected a 4-way kernel tensor");
  }
  hotcake::KernelTensor kernel(
      loaded.tensor, hotcake::ConvSpec{loaded.tensor.dim(0), loaded.tensor.dim(1)});
  hotcake::ChannelFactorization cf =
      hotcake::factorize_channels(kernel.in_channels(), branches);
  hotcake::DenseTensor k_new = hotcake::reshape_kernel(kernel, cf);

  std::vector<std::size_t> modes;
  for (std::size_t i = 0; i < cf.branch_count(); ++i) modes.push_back(2 + i);
  modes.push_back(k_new.order() - 1);
  hotcake::vbmf::VbmfOptions opts;
  opts.use_rsvd = use_rsvd;
  opts.seed = seed;
  std::vector<std::size_t> ranks = hotcake::vbmf::estimate_tucker_ranks(k_new, modes, opts);

  json out{{"branches", cf.branches},
           {"input_ranks", std::vector<std::size_t>(ranks.begin(), ranks.end() - 1)},
           {"output_rank", ranks.back()}};
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_decompose(const std::string& manifest_path, const std::string& out_dir,
                  std::optional<std::size_t> branches, std::optional<std::size_t> diameter,
                  std::optional<std::uint64_t> seed, bool use_rsvd,
                  std::optional<std::int64_t> budget) {
  hotcake::io::Manifest manifest = hotcake::io::load_manifest(manifest_path);
  if (branches) manifest.config.branches = *branches;
  if (diameter) manifest.config.diameter = *diameter;
  if (seed) manifest.config.seed = *seed;
  if (use_rsvd) manifest.config.use_rsvd = true;
  if (budget) manifest.config.param_budget = *budget;
  manifest.config.threads = threads_from_env();

  std::vector<hotcake::NetworkLayer> layers;
  for (const auto& entry : manifest.layers) {
    hotcake::NetworkLayer layer;
    layer.id = entry.id;
    layer.kernel = hotcake::io::load_kernel(entry);
    layer.branches = entry.branches;
    layer.forced_ranks = entry.force_ranks;
    layer.output_spatial = entry.output_spatial;
    layers.push_back(std::move(layer));
  }

  hotcake::CompressionResult result = hotcake::compress_network(layers, manifest.config);

  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (result.layers[i]) {
      hotcake::io::write_decomposed_layer(out_dir, layers[i].id, *result.layers[i]);
    }
  }
  hotcake::io::write_report(fs::path(out_dir) / "report.json", result.report,
                            manifest.config.seed);

  for (const auto& layer : result.report.layers) {
    std::cerr << layer.id << ": " << layer.status;
    if (layer.status == "ok") {
      std::cerr << " (" << layer.original_params << " -> " << layer.compressed_params
                << " params, error " << layer.approx_error << ")";
    } else if (!layer.message.empty()) {
      std::cerr << " (" << layer.message << ")";
    }
    std::cerr << "\n";
  }
  return 0;
}

int cmd_verify(const std::string& manifest_path, const std::string& decomposed_dir,
               std::size_t trials, std::uint64_t seed, std::size_t input_size) {
  hotcake::io::Manifest manifest = hotcake::io::load_manifest(manifest_path);
  json layers_out = json::array();
  bool any_full_rank_failure = false;

  for (const auto& entry : manifest.layers) {
    fs::path core_path = fs::path(decomposed_dir) / (entry.id + "_core.tnsr");
    if (!fs::exists(core_path)) {
      layers_out.push_back(json{{"id", entry.id}, {"status", "skipped"}});
      continue;
    }

    std::size_t branch_count = 0;
    while (fs::exists(fs::path(decomposed_dir) /
                      (entry.id + "_input" + std::to_string(branch_count) + ".tnsr"))) {
      ++branch_count;
    }

    hotcake::DecomposedLayer layer;
    try {
      layer = hotcake::io::read_decomposed_layer(decomposed_dir, entry, branch_count);
    } catch (const hotcake::io::IoError& e) {
      std::cerr << "verify: " << e.what() << "\n";
      return kExitChainBreak;
    } catch (const std::invalid_argument& e) {
      std::cerr << "verify: " << e.what() << "\n";
      return kExitChainBreak;
    }

    hotcake::KernelTensor original = hotcake::io::load_kernel(entry);
    std::size_t h = std::max(input_size, entry.spec.kernel_h);
    std::size_t w = std::max(input_size, entry.spec.kernel_w);

    bool full_rank = layer.ranks.output_rank == entry.out_channels;
    for (std::size_t i = 0; i < layer.channel_factorization.branches.size(); ++i) {
      full_rank = full_rank &&
                  layer.ranks.input_ranks[i] == layer.channel_factorization.branches[i];
    }

    double max_dev = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
      hotcake::FeatureMap x(hotcake::fixtures::gaussian_tensor(
          {h, w, entry.in_channels}, hotcake::derive_seed(seed, trial * 7919 + 1)));
      hotcake::FeatureMap reference = hotcake::conv2d(x, original);
      hotcake::FeatureMap decomposed;
      try {
        decomposed = hotcake::forward_decomposed(x, layer);
      } catch (const std::invalid_argument& e) {
        std::cerr << "verify: " << e.what() << "\n";
        return kExitChainBreak;
      }
      double scale = 0.0, diff = 0.0;
      for (std::size_t i = 0; i < reference.tensor.size(); ++i) {
        scale = std::max(scale, std::abs(reference.tensor[i]));
        diff = std::max(diff, std::abs(reference.tensor[i] - decomposed.tensor[i]));
      }
      max_dev = std::max(max_dev, diff / std::max(scale, 1e-300));
    }

    bool ok = !full_rank || max_dev <= kFullRankTolerance;
    if (!ok) any_full_rank_failure = true;
    layers_out.push_back(json{{"id", entry.id},
                              {"status", ok ? "ok" : "mismatch"},
                              {"full_rank", full_rank},
                              {"max_rel_deviation", max_dev},
                              {"trials", trials}});
  }

  json out{{"layers", std::move(layers_out)}, {"tolerance", kFullRankTolerance}};
  std::cout << out.dump(2) << "\n";
  return any_full_rank_failure ? 1 : 0;
}

int cmd_report(const std::string& report_path, const std::string& csv_path) {
  hotcake::CompressionReport report = hotcake::io::load_report(report_path);

  std::ostringstream table;
  table << std::left << std::setw(12) << "layer" << std::right << std::setw(14) << "params"
        << std::setw(14) << "compressed" << std::setw(10) << "ratio" << std::setw(12)
        << "error" << "  " << std::left << "status" << "\n";
  for (const auto& l : report.layers) {
    table << std::left << std::setw(12) << l.id << std::right << std::setw(14)
          << l.original_params << std::setw(14) << l.compressed_params << std::setw(10)
          << std::fixed << std::setprecision(2) << l.compression_ratio << std::setw(12)
          << std::scientific << std::setprecision(2) << l.approx_error << "  " << std::left
          << l.status << "\n";
    table.unsetf(std::ios::floatfield);
  }
  table << "totals: " << report.total_original_params << " -> "
        << report.total_compressed_params << " params (" << std::fixed
        << std::setprecision(2) << report.total_compression_ratio << "x)\n";

  std::vector<std::string> order = hotcake::plan_compression_order(report);
  table << "compression order:";
  for (const auto& id : order) table << " " << id;
  table << "\n";
  std::cout << table.str();

  if (!csv_path.empty()) {
    std::ostringstream csv;
    csv << "id,status,original_params,compressed_params,compression_ratio,approx_error,"
           "flops_original,flops_compressed\n";
    for (const auto& l : report.layers) {
      csv << l.id << "," << l.status << "," << l.original_params << ","
          << l.compressed_params << "," << l.compression_ratio << "," << l.approx_error
          << "," << l.flops_original << "," << l.flops_compressed << "\n";
    }
    hotcake::io::detail::write_file_atomic(csv_path, csv.str());
  }
  return 0;
}

int cmd_fixture(const std::string& kind, const std::string& out_dir, std::uint64_t seed,
                const std::vector<std::size_t>& shape, const std::vector<std::size_t>& ranks,
                double noise, std::size_t rows, std::size_t cols) {
  fs::create_directories(out_dir);
  if (kind == "planted-tucker") {
    if (shape.empty() || shape.size() != ranks.size()) {
      throw std::invalid_argument("planted-tucker needs --shape and --ranks of equal arity");
    }
    hotcake::DenseTensor t = hotcake::fixtures::planted_tucker(shape, ranks, seed, noise);
    hotcake::io::write_tensor(fs::path(out_dir) / "planted_tucker.tnsr", t);
    std::cout << (fs::path(out_dir) / "planted_tucker.tnsr").string() << "\n";
  } else if (kind == "noise-matrix") {
    hotcake::Matrix m = hotcake::fixtures::gaussian_matrix(rows, cols, seed, noise > 0 ? noise : 1.0);
    hotcake::DenseTensor t({rows, cols}, std::move(m.data));
    hotcake::io::write_tensor(fs::path(out_dir) / "noise_matrix.tnsr", t);
    std::cout << (fs::path(out_dir) / "noise_matrix.tnsr").string() << "\n";
  } else if (kind == "example2") {
    hotcake::DenseTensor kernel = hotcake::fixtures::example2_kernel(seed);
    fs::path kernel_path = fs::path(out_dir) / "example2_kernel.tnsr";
    hotcake::io::write_tensor(kernel_path, kernel);
    json manifest{
        {"layers",
         {{{"id", "example2"},
           {"kernel_path", "example2_kernel.tnsr"},
           {"spatial", {3, 3}},
           {"stride", {1, 1}},
           {"padding", {1, 1}},
           {"in_channels", 128},
           {"out_channels", 256},
           {"branches", {8, 16}},
           {"force_ranks", {{"input", {5, 7}}, {"output", 107}}}}}},
        {"config",
         {{"branches_l", 2}, {"search_diameter", 3}, {"use_rsvd", false}, {"seed", seed}}}};
    hotcake::io::detail::write_file_atomic(fs::path(out_dir) / "example2_manifest.json",
                                           manifest.dump(2) + "\n");
    std::cout << kernel_path.string() << "\n"
              << (fs::path(out_dir) / "example2_manifest.json").string() << "\n";
  } else {
    throw std::invalid_argument("unknown fixture kind: " + kind);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Higher-order Tucker compression of convolutional kernels"};
  app.require_subcommand(1);

  std::string tensor_path, manifest_path, out_dir = ".", decomposed_dir, report_path,
              csv_path, fixture_kind;
  std::size_t branches = 2, trials = 5, input_size = 8, rows = 100, cols = 60;
  std::optional<std::size_t> branches_opt, diameter_opt;
  std::optional<std::uint64_t> seed_opt;
  std::optional<std::int64_t> budget_opt;
  std::uint64_t seed = 0;
  bool use_rsvd = false;
  double noise = 0.0;
  std::vector<std::size_t> shape, ranks;

  CLI::App* ranks_cmd = app.add_subcommand("ranks", "Print VBMF-centered ranks for a kernel");
  ranks_cmd->add_option("tensor", tensor_path, "kernel tensor file")->required();
  ranks_cmd->add_option("--branches", branches, "number of input-channel branches");
  ranks_cmd->add_flag("--rsvd", use_rsvd, "use randomized SVD");
  ranks_cmd->add_option("--seed", seed, "random seed");

  CLI::App* dec_cmd = app.add_subcommand("decompose", "Decompose every layer in a manifest");
  dec_cmd->add_option("manifest", manifest_path, "layer manifest JSON")->required();
  dec_cmd->add_option("--out", out_dir, "output directory");
  dec_cmd->add_option("--branches", branches_opt, "override branch count");
  dec_cmd->add_option("--diameter", diameter_opt, "override search diameter");
  dec_cmd->add_option("--seed", seed_opt, "override seed");
  dec_cmd->add_flag("--rsvd", use_rsvd, "force randomized SVD");
  dec_cmd->add_option("--budget", budget_opt, "parameter budget for the rank search");

  CLI::App* ver_cmd = app.add_subcommand("verify", "Check decomposed layers against the originals");
  ver_cmd->add_option("manifest", manifest_path, "layer manifest JSON")->required();
  ver_cmd->add_option("decomposed", decomposed_dir, "directory with stage tensors")->required();
  ver_cmd->add_option("--trials", trials, "random inputs per layer");
  ver_cmd->add_option("--seed", seed, "random seed");
  ver_cmd->add_option("--size", input_size, "input spatial size");

  CLI::App* rep_cmd = app.add_subcommand("report", "Render a compression report");
  rep_cmd->add_option("report", report_path, "report JSON")->required();
  rep_cmd->add_option("--csv", csv_path, "also write a CSV copy");

  CLI::App* fix_cmd = app.add_subcommand("fixture", "Generate planted test tensors");
  fix_cmd->add_option("kind", fixture_kind, "planted-tucker | noise-matrix | example2")->required();
  fix_cmd->add_option("--out", out_dir, "output directory");
  fix_cmd->add_option("--seed", seed, "random seed");
  fix_cmd->add_option("--shape", shape, "tensor shape (planted-tucker)");
  fix_cmd->add_option("--ranks", ranks, "planted ranks (planted-tucker)");
  fix_cmd->add_option("--noise", noise, "noise std");
  fix_cmd->add_option("--rows", rows, "matrix rows (noise-matrix)");
  fix_cmd->add_option("--cols", cols, "matrix cols (noise-matrix)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ranks_cmd->parsed()) return cmd_ranks(tensor_path, branches, use_rsvd, seed);
    if (dec_cmd->parsed()) {
      return cmd_decompose(manifest_path, out_dir, branches_opt, diameter_opt, seed_opt,
                           use_rsvd, budget_opt);
    }
    if (ver_cmd->parsed()) {
      return cmd_verify(manifest_path, decomposed_dir, trials, seed, input_size);
    }
    if (rep_cmd->parsed()) return cmd_report(report_path, csv_path);
    if (fix_cmd->parsed()) {
      return cmd_fixture(fixture_kind, out_dir, seed, shape, ranks, noise, rows, cols);
    }
  } catch (const hotcake::io::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitShape;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
