#include "layerprobe/dataset.hpp"

#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "layerprobe/common.hpp"
#include "layerprobe/random.hpp"

namespace layerprobe {

Label parse_label(const std::string& token) {
  if (token == "bonafide") return Label::bonafide;
  if (token == "spoof") return Label::spoof;
  throw Error("unknown label '" + token + "'");
}

const char* to_string(Label label) { return label == Label::bonafide ? "bonafide" : "spoof"; }

const char* to_string(SplitName split) {
  switch (split) {
    case SplitName::train: return "train";
    case SplitName::dev: return "dev";
    case SplitName::eval: return "eval";
  }
  return "?";
}

std::vector<ProtocolEntry> parse_protocol(const std::filesystem::path& path, const std::filesystem::path& audio_root) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read protocol file " + path.string());

  std::vector<ProtocolEntry> entries;
  std::unordered_set<std::string> seen;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    std::istringstream ls(line);
    std::vector<std::string> fields;
    for (std::string f; ls >> f;) fields.push_back(std::move(f));
    if (fields.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() < 2) throw Error(where + ": expected at least 2 fields");

    ProtocolEntry e;
    try {
      e.label = parse_label(fields.back());
    } catch (const Error& err) {
      throw Error(where + ": " + err.what());
    }

    std::optional<std::filesystem::path> explicit_path;
    switch (fields.size()) {
      case 2:
        e.utt_id = fields[0];
        break;
      case 3:
        e.utt_id = fields[0];
        explicit_path = fields[1];
        break;
      case 4:
        throw Error(where + ": 4-field lines are ambiguous; use 2, 3 or at least 5 fields");
      default:
        e.utt_id = fields[1];
        if (const auto& tag = fields[fields.size() - 2]; tag != "-") e.attack_tag = tag;
        break;
    }
    if (explicit_path) {
      e.audio_path = explicit_path->is_absolute() ? *explicit_path : audio_root / *explicit_path;
    } else {
      e.audio_path = audio_root / (e.utt_id + ".wav");
    }
    if (!seen.insert(e.utt_id).second) throw Error(where + ": duplicate utt_id '" + e.utt_id + "'");
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<std::vector<std::size_t>> make_batch_indices(std::size_t count, int batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw Error("batch_size must be at least 1");
  if (count == 0) throw Error("cannot batch an empty split");

  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = count - 1; i > 0; --i) {
    std::swap(order[i], order[rng.uniform_index(i + 1)]);
  }

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(count, start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<std::vector<ProtocolEntry>> make_batches(const DatasetSplit& split, int batch_size, std::uint64_t seed) {
  std::vector<std::vector<ProtocolEntry>> out;
  for (const auto& idx : make_batch_indices(split.entries.size(), batch_size, seed)) {
    auto& batch = out.emplace_back();
    batch.reserve(idx.size());
    for (auto i : idx) batch.push_back(split.entries[i]);
  }
  return out;
}

void write_protocol_csv(const std::vector<ProtocolEntry>& entries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "utt_id,label,audio_path,attack_tag\n";
  for (const auto& e : entries) {
    out << e.utt_id << ',' << to_string(e.label) << ',' << e.audio_path.string() << ',' << e.attack_tag.value_or("")
        << '\n';
  }
}

}  // namespace layerprobe
