#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "layerprobe/common.hpp"
#include "layerprobe/features.hpp"

namespace layerprobe {

// Container layout:
//   bytes 0-7    magic "LPROBE01"
//   bytes 8-11   little-endian u32 header length H
//   bytes 12..   H bytes of UTF-8 JSON: {"format_version", "metadata", "tensors": [...]}
//   remainder    little-endian f32 blob, tensors densely packed in manifest order

inline constexpr char kContainerMagic[8] = {'L', 'P', 'R', 'O', 'B', 'E', '0', '1'};
inline constexpr int kContainerFormatVersion = 1;

using Metadata = std::map<std::string, std::string>;

struct TensorManifestEntry {
  std::string name;
  std::string dtype = "f32";
  std::vector<std::int64_t> shape;
  std::uint64_t byte_offset = 0;
  std::uint64_t byte_length = 0;
};

struct ModelContainer {
  int format_version = kContainerFormatVersion;
  Metadata metadata;
  std::vector<TensorManifestEntry> manifest;
  TensorMap tensors;

  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
  const Tensor& tensor(const std::string& name) const;
  /// Metadata lookups that throw a descriptive error when the key is absent or malformed.
  const std::string& meta(const std::string& key) const;
  std::int64_t meta_int(const std::string& key) const;
};

/// Writes tensors (in name order) and metadata. Rejects empty maps and non-finite values.
void write_container(const TensorMap& tensors, const Metadata& metadata, const std::filesystem::path& path);

ModelContainer read_container(const std::filesystem::path& path);

struct GoldenVectors {
  std::vector<float> input;
  LayerFeatureStack expected;
};

/// Reads the reserved "golden.input" / "golden.layer.<l>" tensors (l = 1..N, consecutive).
/// Each layer must be T x hidden_dim, with hidden_dim taken from the container metadata.
GoldenVectors load_golden_vectors(const std::filesystem::path& path);
GoldenVectors golden_vectors_from(const ModelContainer& container);

/// FNV-1a over names, shapes and raw bytes of every tensor whose name starts with prefix.
std::uint64_t tensor_checksum(const TensorMap& tensors, const std::string& prefix = "");
std::string checksum_hex(std::uint64_t checksum);

}  // namespace layerprobe
