#include "layerprobe/feature_store.hpp"

#include <cctype>

#include "layerprobe/model_io.hpp"

namespace layerprobe {

namespace {

std::string sanitize(const std::string& s) {
  std::string out = s;
  for (char& ch : out) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_' && ch != '.') ch = '_';
  }
  return out;
}

}  // namespace

FeatureCache::FeatureCache(std::filesystem::path dir, std::uint64_t encoder_checksum)
    : dir_(std::move(dir)), checksum_(encoder_checksum) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path FeatureCache::file_for(const std::string& utt_id, const std::string& crop) const {
  return dir_ / (sanitize(utt_id) + "__" + sanitize(crop) + ".lpc");
}

std::optional<LayerFeatureStack> FeatureCache::load(const std::string& utt_id, const std::string& crop,
                                                    int layers) const {
  const auto path = file_for(utt_id, crop);
  if (!std::filesystem::exists(path)) return std::nullopt;
  ModelContainer c;
  try {
    c = read_container(path);
  } catch (const Error&) {
    return std::nullopt;
  }
  auto meta = [&c](const char* key) {
    auto it = c.metadata.find(key);
    return it == c.metadata.end() ? std::string() : it->second;
  };
  if (meta("encoder_checksum") != checksum_hex(checksum_) || meta("utt_id") != utt_id || meta("crop") != crop) {
    return std::nullopt;
  }
  if (c.meta_int("layers") < layers) return std::nullopt;

  LayerFeatureStack stack;
  stack.utt_id = utt_id;
  for (int l = 1; l <= layers; ++l) {
    const std::string name = "feat." + utt_id + ".layer." + std::to_string(l);
    if (!c.contains(name)) return std::nullopt;
    stack.layers.push_back(c.tensor(name).to_matrix());
  }
  return stack;
}

void FeatureCache::store(const LayerFeatureStack& stack, const std::string& crop) const {
  TensorMap tensors;
  for (std::size_t l = 0; l < stack.depth(); ++l) {
    tensors.emplace("feat." + stack.utt_id + ".layer." + std::to_string(l + 1), Tensor::from_matrix(stack.layers[l]));
  }
  const Metadata meta = {{"encoder_checksum", checksum_hex(checksum_)},
                         {"utt_id", stack.utt_id},
                         {"crop", crop},
                         {"layers", std::to_string(stack.depth())}};
  const auto path = file_for(stack.utt_id, crop);
  auto tmp = path;
  tmp += ".tmp";
  write_container(tensors, meta, tmp);
  std::filesystem::rename(tmp, path);
}

FeatureStore::FeatureStore(const EncoderModel& model, int layers, std::int64_t target_len, bool memoize,
                           std::optional<std::filesystem::path> cache_dir)
    : model_(model), layers_(layers), target_len_(target_len), memoize_(memoize) {
  if (layers < 1 || layers > model.num_layers()) {
    throw Error("layer count " + std::to_string(layers) + " outside [1, " + std::to_string(model.num_layers()) + "]");
  }
  require(target_len > 0, "target_len must be positive");
  if (memoize_ && cache_dir) disk_.emplace(*cache_dir, model.checksum());
}

// A forced train_random window is the eval_start window, so both share one descriptor.
std::string FeatureStore::crop_descriptor(CropMode mode) const {
  return mode == CropMode::full ? "full" : "start-" + std::to_string(target_len_);
}

const AudioSegment& FeatureStore::audio(const ProtocolEntry& entry) {
  auto it = audio_.find(entry.utt_id);
  if (it != audio_.end()) return it->second;
  AudioSegment seg = decode_wav(entry.audio_path);
  seg.utt_id = entry.utt_id;
  if (!memoize_) audio_.clear();
  return audio_.emplace(entry.utt_id, std::move(seg)).first->second;
}

LayerFeatureStack FeatureStore::get(const ProtocolEntry& entry, CropMode mode, Rng& rng) {
  if (mode == CropMode::train_random) {
    const AudioSegment& seg = audio(entry);
    if (!crop_is_deterministic(static_cast<std::int64_t>(seg.samples.size()), target_len_, mode)) {
      return model_.encode(crop_or_pad(seg, target_len_, mode, &rng), layers_);
    }
  }

  const std::string crop = crop_descriptor(mode);
  const auto key = std::make_pair(entry.utt_id, crop);
  if (memoize_) {
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    if (disk_) {
      if (auto cached = disk_->load(entry.utt_id, crop, layers_)) {
        memo_.emplace(key, *cached);
        return *cached;
      }
    }
  }
  LayerFeatureStack stack = model_.encode(crop_or_pad(audio(entry), target_len_, mode, nullptr), layers_);
  if (memoize_) {
    if (disk_) disk_->store(stack, crop);
    memo_.emplace(key, stack);
  }
  return stack;
}

FeatureCache cache_layer_features(const DatasetSplit& split, const EncoderModel& model, int layers,
                                  const std::filesystem::path& cache_dir, std::int64_t target_len) {
  FeatureStore store(model, layers, target_len, true, cache_dir);
  Rng unused(0);
  for (const auto& e : split.entries) store.get(e, CropMode::eval_start, unused);
  return FeatureCache(cache_dir, model.checksum());
}

}  // namespace layerprobe
