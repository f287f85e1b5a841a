#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>

#include "layerprobe/audio.hpp"
#include "layerprobe/dataset.hpp"
#include "layerprobe/encoder.hpp"
#include "layerprobe/features.hpp"

namespace layerprobe {

/// On-disk layer-feature cache. One container file per (utterance, crop); tensors are named
/// "feat.<utt_id>.layer.<l>" and the metadata records the encoder checksum and layer count.
/// Files written for X layers serve any request for X' <= X layers.
class FeatureCache {
 public:
  FeatureCache(std::filesystem::path dir, std::uint64_t encoder_checksum);

  std::optional<LayerFeatureStack> load(const std::string& utt_id, const std::string& crop, int layers) const;
  void store(const LayerFeatureStack& stack, const std::string& crop) const;

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path file_for(const std::string& utt_id, const std::string& crop) const;

 private:
  std::filesystem::path dir_;
  std::uint64_t checksum_;
};

/// Supplies layer features for protocol entries: decode, crop, encode. When memoization is on,
/// deterministic windows are kept in memory and, with a cache directory, on disk. Random windows
/// (train_random on audio with more than one possible window) are always recomputed.
class FeatureStore {
 public:
  FeatureStore(const EncoderModel& model, int layers, std::int64_t target_len, bool memoize,
               std::optional<std::filesystem::path> cache_dir = std::nullopt);

  LayerFeatureStack get(const ProtocolEntry& entry, CropMode mode, Rng& rng);

  int layers() const { return layers_; }
  const EncoderModel& model() const { return model_; }

 private:
  std::string crop_descriptor(CropMode mode) const;
  const AudioSegment& audio(const ProtocolEntry& entry);

  const EncoderModel& model_;
  int layers_;
  std::int64_t target_len_;
  bool memoize_;
  std::optional<FeatureCache> disk_;
  std::unordered_map<std::string, AudioSegment> audio_;
  std::map<std::pair<std::string, std::string>, LayerFeatureStack> memo_;
};

/// Encodes every entry of the split once (eval_start crop) and persists the stacks.
FeatureCache cache_layer_features(const DatasetSplit& split, const EncoderModel& model, int layers,
                                  const std::filesystem::path& cache_dir, std::int64_t target_len = kWindowSamples);

}  // namespace layerprobe
