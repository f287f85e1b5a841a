#include "layerprobe/model_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

namespace layerprobe {

namespace {

using nlohmann::json;

static_assert(std::numeric_limits<float>::is_iec559, "f32 blob requires IEEE-754 floats");

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

void append_u32(std::string& out, std::uint32_t v) {
  v = to_le(v);
  char bytes[4];
  std::memcpy(bytes, &v, 4);
  out.append(bytes, 4);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open container " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

}  // namespace

std::string shape_string(std::span<const std::int64_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

const Tensor& ModelContainer::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error("container has no tensor '" + name + "'");
  return it->second;
}

const std::string& ModelContainer::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw Error("container metadata lacks '" + key + "'");
  return it->second;
}

std::int64_t ModelContainer::meta_int(const std::string& key) const {
  const auto& text = meta(key);
  try {
    std::size_t used = 0;
    auto v = std::stoll(text, &used);
    if (used != text.size()) throw Error("");
    return v;
  } catch (const std::exception&) {
    throw Error("metadata '" + key + "' is not an integer: " + text);
  }
}

void write_container(const TensorMap& tensors, const Metadata& metadata, const std::filesystem::path& path) {
  if (tensors.empty()) throw Error("empty container");

  json manifest = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    require(!name.empty(), "tensor with empty name");
    require(!t.shape.empty(), "tensor '" + name + "' has no shape");
    for (auto s : t.shape) require(s > 0, "tensor '" + name + "' has non-positive dimension");
    require(static_cast<std::int64_t>(t.values.size()) == t.element_count(),
            "tensor '" + name + "' value count does not match shape " + shape_string(t.shape));
    for (float v : t.values) {
      if (!std::isfinite(v)) throw Error("tensor '" + name + "' contains a non-finite value");
    }
    const std::uint64_t length = 4 * t.values.size();
    manifest.push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}, {"length", length}});
    offset += length;
  }

  json header = {{"format_version", kContainerFormatVersion}, {"metadata", metadata}, {"tensors", manifest}};
  const std::string header_text = header.dump();
  require(header_text.size() <= std::numeric_limits<std::uint32_t>::max(), "container header too large");

  std::string bytes(kContainerMagic, sizeof(kContainerMagic));
  append_u32(bytes, static_cast<std::uint32_t>(header_text.size()));
  bytes += header_text;
  bytes.reserve(bytes.size() + offset);
  for (const auto& [name, t] : tensors) {
    for (float v : t.values) append_u32(bytes, std::bit_cast<std::uint32_t>(v));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write container " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

ModelContainer read_container(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kContainerMagic, 8) != 0) {
    throw Error("corrupt header: bad magic in " + path.string());
  }
  std::uint32_t header_len;
  std::memcpy(&header_len, bytes.data() + 8, 4);
  header_len = to_le(header_len);
  if (header_len > bytes.size() - 12) throw Error("corrupt header: header length exceeds file size");

  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const json::exception& e) {
    throw Error(std::string("corrupt header: ") + e.what());
  }

  ModelContainer c;
  const std::uint64_t blob_start = 12 + static_cast<std::uint64_t>(header_len);
  const std::uint64_t blob_size = bytes.size() - blob_start;
  try {
    c.format_version = header.at("format_version").get<int>();
    if (c.format_version != kContainerFormatVersion) {
      throw Error("unknown format version " + std::to_string(c.format_version));
    }
    c.metadata = header.at("metadata").get<Metadata>();

    std::uint64_t expected_offset = 0;
    for (const auto& item : header.at("tensors")) {
      TensorManifestEntry e;
      e.name = item.at("name").get<std::string>();
      e.dtype = item.at("dtype").get<std::string>();
      e.shape = item.at("shape").get<std::vector<std::int64_t>>();
      e.byte_offset = item.at("offset").get<std::uint64_t>();
      e.byte_length = item.at("length").get<std::uint64_t>();

      if (e.dtype != "f32") throw Error("tensor '" + e.name + "' has unsupported dtype " + e.dtype);
      require(!e.shape.empty(), "tensor '" + e.name + "' has no shape");
      std::uint64_t count = 1;
      for (auto s : e.shape) {
        if (s <= 0) throw Error("tensor '" + e.name + "' has non-positive dimension");
        if (count > std::numeric_limits<std::uint64_t>::max() / 4 / static_cast<std::uint64_t>(s)) {
          throw Error("offset/length overflow in tensor '" + e.name + "'");
        }
        count *= static_cast<std::uint64_t>(s);
      }
      if (e.byte_length != 4 * count) throw Error("tensor '" + e.name + "' byte length does not match shape");
      if (e.byte_offset != expected_offset) throw Error("tensor '" + e.name + "' is not densely packed");
      if (e.byte_length > blob_size || e.byte_offset > blob_size - e.byte_length) {
        throw Error("blob overrun in tensor '" + e.name + "'");
      }
      expected_offset += e.byte_length;

      Tensor t;
      t.shape = e.shape;
      t.values.resize(count);
      const char* src = bytes.data() + blob_start + e.byte_offset;
      for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, src + 4 * i, 4);
        t.values[i] = std::bit_cast<float>(to_le(bits));
      }
      if (!c.tensors.emplace(e.name, std::move(t)).second) throw Error("duplicate tensor name '" + e.name + "'");
      c.manifest.push_back(std::move(e));
    }
    if (expected_offset != blob_size) throw Error("corrupt container: trailing bytes after last tensor");
  } catch (const json::exception& e) {
    throw Error(std::string("corrupt header: ") + e.what());
  }
  return c;
}

GoldenVectors golden_vectors_from(const ModelContainer& c) {
  if (!c.contains("golden.input")) throw Error("no golden vectors");
  GoldenVectors g;
  g.input = c.tensor("golden.input").values;
  g.expected.utt_id = "golden";

  const std::int64_t hidden = c.meta_int("hidden_dim");
  const std::int64_t num_layers = c.metadata.count("num_layers") ? c.meta_int("num_layers") : -1;
  for (int l = 1;; ++l) {
    const std::string name = "golden.layer." + std::to_string(l);
    if (!c.contains(name)) break;
    const Tensor& t = c.tensor(name);
    if (t.shape.size() != 2 || t.shape[1] != hidden) {
      throw Error("shape mismatch: " + name + " has shape " + shape_string(t.shape) + ", expected [T," +
                  std::to_string(hidden) + "]");
    }
    if (!g.expected.layers.empty() && static_cast<std::size_t>(t.shape[0]) != g.expected.frame_count()) {
      throw Error("shape mismatch: " + name + " frame count differs from golden.layer.1");
    }
    g.expected.layers.push_back(t.to_matrix());
  }
  if (g.expected.layers.empty()) throw Error("no golden vectors: golden.layer.1 missing");
  if (num_layers > 0 && static_cast<std::int64_t>(g.expected.layers.size()) > num_layers) {
    throw Error("shape mismatch: more golden layers than metadata num_layers");
  }
  return g;
}

GoldenVectors load_golden_vectors(const std::filesystem::path& path) {
  return golden_vectors_from(read_container(path));
}

std::uint64_t tensor_checksum(const TensorMap& tensors, const std::string& prefix) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : tensors) {
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    feed(name.data(), name.size());
    for (auto s : t.shape) feed(&s, sizeof s);
    feed(t.values.data(), t.values.size() * sizeof(float));
  }
  return h;
}

std::string checksum_hex(std::uint64_t checksum) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(checksum));
  return buf;
}

}  // namespace layerprobe
