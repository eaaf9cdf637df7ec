#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hotcake/pipeline.hpp"
#include "hotcake/tensor.hpp"

namespace hotcake::io {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Dtype { f32, f64 };

namespace detail {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};
constexpr std::uint8_t kVersion = 0x01;

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

/// Writes bytes to path atomically (temp file + rename).
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed for " + path.string() + ": " + ec.message());
}

}  // namespace detail

/// Binary tensor container: "TNSR" magic, version byte, 4-byte
/// little-endian header length, UTF-8 JSON header
/// {"dtype","order","shape"}, then raw little-endian element data.
inline void write_tensor(const std::filesystem::path& path, const DenseTensor& t,
                         Dtype dtype = Dtype::f64) {
  nlohmann::json header{{"dtype", dtype == Dtype::f64 ? "f64" : "f32"},
                        {"order", "row-major"},
                        {"shape", t.shape()}};
  std::string header_str = header.dump();

  std::string bytes;
  bytes.reserve(9 + header_str.size() + t.size() * 8);
  bytes.append(detail::kMagic, 4);
  bytes.push_back(static_cast<char>(detail::kVersion));
  detail::put_u32_le(bytes, static_cast<std::uint32_t>(header_str.size()));
  bytes += header_str;
  if (dtype == Dtype::f64) {
    for (double v : t.data()) detail::put_u64_le(bytes, std::bit_cast<std::uint64_t>(v));
  } else {
    for (double v : t.data()) {
      detail::put_u32_le(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  detail::write_file_atomic(path, bytes);
}

struct LoadedTensor {
  DenseTensor tensor;
  Dtype dtype = Dtype::f64;
};

inline LoadedTensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 9 || std::memcmp(bytes.data(), detail::kMagic, 4) != 0) {
    throw IoError("not a tensor file (bad magic): " + path.string());
  }
  if (bytes[4] != detail::kVersion) throw IoError("unsupported tensor file version");
  std::uint32_t header_len = detail::get_u32_le(bytes.data() + 5);
  if (bytes.size() < 9 + static_cast<std::size_t>(header_len)) {
    throw IoError("truncated tensor file header: " + path.string());
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed tensor header: " + std::string(e.what()));
  }
  std::string dtype_str = header.at("dtype").get<std::string>();
  if (header.at("order").get<std::string>() != "row-major") {
    throw IoError("unsupported element order in tensor file");
  }
  std::vector<std::size_t> shape = header.at("shape").get<std::vector<std::size_t>>();
  std::size_t count = 1;
  for (std::size_t d : shape) count *= d;

  const unsigned char* payload = bytes.data() + 9 + header_len;
  const std::size_t payload_len = bytes.size() - 9 - header_len;
  std::vector<double> data(count);
  Dtype dtype;
  if (dtype_str == "f64") {
    dtype = Dtype::f64;
    if (payload_len != count * 8) throw IoError("tensor payload length mismatch");
    for (std::size_t i = 0; i < count; ++i) {
      data[i] = std::bit_cast<double>(detail::get_u64_le(payload + i * 8));
    }
  } else if (dtype_str == "f32") {
    dtype = Dtype::f32;
    if (payload_len != count * 4) throw IoError("tensor payload length mismatch");
    for (std::size_t i = 0; i < count; ++i) {
      data[i] = static_cast<double>(std::bit_cast<float>(detail::get_u32_le(payload + i * 4)));
    }
  } else {
    throw IoError("unsupported dtype in tensor file: " + dtype_str);
  }
  return LoadedTensor{DenseTensor(std::move(shape), std::move(data)), dtype};
}

/// One layer entry of a manifest plus the global run configuration.
struct ManifestLayer {
  std::string id;
  std::filesystem::path kernel_path;
  ConvSpec spec;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::optional<std::vector<std::size_t>> branches;
  std::optional<HotcakeRanks> force_ranks;
  std::optional<std::pair<std::size_t, std::size_t>> output_spatial;
};

struct Manifest {
  std::vector<ManifestLayer> layers;
  CompressionConfig config;
};

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("malformed manifest JSON: " + std::string(e.what()));
  }

  Manifest manifest;
  const std::filesystem::path base = path.parent_path();
  try {
    if (doc.contains("config")) {
      const auto& c = doc["config"];
      if (c.contains("branches_l")) manifest.config.branches = c["branches_l"].get<std::size_t>();
      if (c.contains("search_diameter")) manifest.config.diameter = c["search_diameter"].get<std::size_t>();
      if (c.contains("use_rsvd")) manifest.config.use_rsvd = c["use_rsvd"].get<bool>();
      if (c.contains("seed")) manifest.config.seed = c["seed"].get<std::uint64_t>();
      if (c.contains("skip_min_in_channels")) {
        manifest.config.skip_min_in_channels = c["skip_min_in_channels"].get<std::size_t>();
      }
      if (c.contains("param_budget")) {
        manifest.config.param_budget = c["param_budget"].get<std::int64_t>();
      }
    }
    for (const auto& l : doc.at("layers")) {
      ManifestLayer layer;
      layer.id = l.at("id").get<std::string>();
      std::filesystem::path kernel_path = l.at("kernel_path").get<std::string>();
      layer.kernel_path = kernel_path.is_absolute() ? kernel_path : base / kernel_path;
      auto spatial = l.at("spatial").get<std::vector<std::size_t>>();
      auto stride = l.at("stride").get<std::vector<std::size_t>>();
      auto padding = l.at("padding").get<std::vector<std::size_t>>();
      if (spatial.size() != 2 || stride.size() != 2 || padding.size() != 2) {
        throw std::invalid_argument("layer " + layer.id + ": spatial/stride/padding must be pairs");
      }
      layer.spec = ConvSpec{spatial[0], spatial[1], stride[0], stride[1], padding[0], padding[1]};
      layer.in_channels = l.at("in_channels").get<std::size_t>();
      layer.out_channels = l.at("out_channels").get<std::size_t>();
      if (l.contains("branches")) {
        layer.branches = l["branches"].get<std::vector<std::size_t>>();
      }
      if (l.contains("force_ranks")) {
        HotcakeRanks ranks;
        ranks.input_ranks = l["force_ranks"].at("input").get<std::vector<std::size_t>>();
        ranks.output_rank = l["force_ranks"].at("output").get<std::size_t>();
        layer.force_ranks = ranks;
      }
      if (l.contains("output_spatial")) {
        auto os = l["output_spatial"].get<std::vector<std::size_t>>();
        if (os.size() != 2) throw std::invalid_argument("output_spatial must be a pair");
        layer.output_spatial = std::make_pair(os[0], os[1]);
      }
      manifest.layers.push_back(std::move(layer));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("malformed manifest: " + std::string(e.what()));
  }
  return manifest;
}

/// Loads a layer's kernel and checks it against the manifest entry.
inline KernelTensor load_kernel(const ManifestLayer& layer) {
  LoadedTensor loaded = read_tensor(layer.kernel_path);
  const std::vector<std::size_t> expected{layer.spec.kernel_h, layer.spec.kernel_w,
                                          layer.in_channels, layer.out_channels};
  if (loaded.tensor.shape() != expected) {
    throw std::invalid_argument("layer " + layer.id + ": kernel file shape does not match manifest");
  }
  return KernelTensor(std::move(loaded.tensor), layer.spec);
}

inline nlohmann::json report_to_json(const CompressionReport& report, std::uint64_t seed) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerReport& l : report.layers) {
    nlohmann::json entry{{"id", l.id},
                         {"status", l.status},
                         {"original_params", l.original_params},
                         {"compressed_params", l.compressed_params},
                         {"compression_ratio", l.compression_ratio},
                         {"approx_error", l.approx_error},
                         {"flops_original", l.flops_original},
                         {"flops_compressed", l.flops_compressed}};
    if (!l.message.empty()) entry["message"] = l.message;
    if (!l.branches.empty()) {
      entry["branches"] = l.branches;
      entry["input_ranks"] = l.input_ranks;
      entry["output_rank"] = l.output_rank;
    }
    layers.push_back(std::move(entry));
  }
  return nlohmann::json{{"layers", std::move(layers)},
                        {"seed", seed},
                        {"totals",
                         {{"original_params", report.total_original_params},
                          {"compressed_params", report.total_compressed_params},
                          {"compression_ratio", report.total_compression_ratio}}}};
}

inline void write_report(const std::filesystem::path& path, const CompressionReport& report,
                         std::uint64_t seed) {
  detail::write_file_atomic(path, report_to_json(report, seed).dump(2) + "\n");
}

inline CompressionReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("malformed report JSON: " + std::string(e.what()));
  }
  CompressionReport report;
  try {
    for (const auto& l : doc.at("layers")) {
      LayerReport layer;
      layer.id = l.at("id").get<std::string>();
      layer.status = l.at("status").get<std::string>();
      layer.original_params = l.at("original_params").get<std::int64_t>();
      layer.compressed_params = l.at("compressed_params").get<std::int64_t>();
      layer.compression_ratio = l.at("compression_ratio").get<double>();
      layer.approx_error = l.at("approx_error").get<double>();
      layer.flops_original = l.at("flops_original").get<std::int64_t>();
      layer.flops_compressed = l.at("flops_compressed").get<std::int64_t>();
      if (l.contains("message")) layer.message = l["message"].get<std::string>();
      if (l.contains("branches")) {
        layer.branches = l["branches"].get<std::vector<std::size_t>>();
        layer.input_ranks = l["input_ranks"].get<std::vector<std::size_t>>();
        layer.output_rank = l["output_rank"].get<std::size_t>();
      }
      report.layers.push_back(std::move(layer));
    }
    report.total_original_params = doc.at("totals").at("original_params").get<std::int64_t>();
    report.total_compressed_params = doc.at("totals").at("compressed_params").get<std::int64_t>();
    report.total_compression_ratio = doc.at("totals").at("compression_ratio").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("malformed report: " + std::string(e.what()));
  }
  return report;
}

/// Stage file names for one decomposed layer.
inline std::vector<std::filesystem::path> stage_paths(const std::filesystem::path& dir,
                                                      const std::string& layer_id,
                                                      std::size_t branch_count) {
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < branch_count; ++i) {
    paths.push_back(dir / (layer_id + "_input" + std::to_string(i) + ".tnsr"));
  }
  paths.push_back(dir / (layer_id + "_core.tnsr"));
  paths.push_back(dir / (layer_id + "_output.tnsr"));
  return paths;
}

inline void write_decomposed_layer(const std::filesystem::path& dir, const std::string& layer_id,
                                   const DecomposedLayer& layer) {
  auto paths = stage_paths(dir, layer_id, layer.input_factors.size());
  for (std::size_t i = 0; i < layer.input_factors.size(); ++i) {
    write_tensor(paths[i], layer.input_factors[i]);
  }
  write_tensor(paths[layer.input_factors.size()], layer.core_kernel);
  write_tensor(paths[layer.input_factors.size() + 1], layer.output_factor);
}

/// Rebuilds a DecomposedLayer from its stage files, validating the
/// shape chain against the manifest entry.
inline DecomposedLayer read_decomposed_layer(const std::filesystem::path& dir,
                                             const ManifestLayer& entry,
                                             std::size_t branch_count) {
  auto paths = stage_paths(dir, entry.id, branch_count);
  DecomposedLayer layer;
  layer.spec = entry.spec;

  std::size_t channel_product = 1;
  std::size_t core_channels = 1;
  for (std::size_t i = 0; i < branch_count; ++i) {
    DenseTensor t = read_tensor(paths[i]).tensor;
    if (t.order() != 4 || t.dim(0) != 1 || t.dim(1) != 1) {
      throw std::invalid_argument("stage file is not a pointwise factor: " + paths[i].string());
    }
    channel_product *= t.dim(2);
    core_channels *= t.dim(3);
    layer.channel_factorization.branches.push_back(t.dim(2));
    layer.ranks.input_ranks.push_back(t.dim(3));
    layer.input_factors.push_back(std::move(t));
  }
  layer.core_kernel = read_tensor(paths[branch_count]).tensor;
  layer.output_factor = read_tensor(paths[branch_count + 1]).tensor;

  if (channel_product != entry.in_channels) {
    throw std::invalid_argument("layer " + entry.id + ": input factors do not compose to in_channels");
  }
  if (layer.core_kernel.order() != 4 || layer.core_kernel.dim(0) != entry.spec.kernel_h ||
      layer.core_kernel.dim(1) != entry.spec.kernel_w ||
      layer.core_kernel.dim(2) != core_channels) {
    throw std::invalid_argument("layer " + entry.id + ": core kernel breaks the shape chain");
  }
  if (layer.output_factor.order() != 4 || layer.output_factor.dim(0) != 1 ||
      layer.output_factor.dim(1) != 1 ||
      layer.output_factor.dim(2) != layer.core_kernel.dim(3) ||
      layer.output_factor.dim(3) != entry.out_channels) {
    throw std::invalid_argument("layer " + entry.id + ": output factor breaks the shape chain");
  }
  layer.ranks.output_rank = layer.output_factor.dim(2);
  return layer;
}

}  // namespace hotcake::io
