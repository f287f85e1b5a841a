#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace layerprobe {

/// Class index 0 is bonafide, 1 is spoof; logits and cross-entropy use the same order.
enum class Label { bonafide = 0, spoof = 1 };

Label parse_label(const std::string& token);
const char* to_string(Label label);

struct ProtocolEntry {
  std::string utt_id;
  Label label = Label::bonafide;
  std::filesystem::path audio_path;
  std::optional<std::string> attack_tag;

  friend bool operator==(const ProtocolEntry&, const ProtocolEntry&) = default;
};

enum class SplitName { train, dev, eval };

const char* to_string(SplitName split);

struct DatasetSplit {
  SplitName name = SplitName::train;
  std::vector<ProtocolEntry> entries;
};

/// Accepted line layouts (whitespace separated, label always last):
///   utt_id label
///   utt_id audio_path label
///   speaker utt_id <ignored...> attack label      (five or more fields)
/// Relative audio paths resolve against audio_root; otherwise audio_root/utt_id.wav.
std::vector<ProtocolEntry> parse_protocol(const std::filesystem::path& path, const std::filesystem::path& audio_root);

/// Seeded permutation of the split cut into consecutive chunks; the final short chunk is kept.
std::vector<std::vector<ProtocolEntry>> make_batches(const DatasetSplit& split, int batch_size, std::uint64_t seed);

/// Index form of make_batches, used by the trainer to avoid copying entries.
std::vector<std::vector<std::size_t>> make_batch_indices(std::size_t count, int batch_size, std::uint64_t seed);

void write_protocol_csv(const std::vector<ProtocolEntry>& entries, const std::filesystem::path& path);

}  // namespace layerprobe
