#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "layerprobe/aggregation.hpp"
#include "layerprobe/audio.hpp"
#include "layerprobe/backend.hpp"
#include "layerprobe/dataset.hpp"
#include "layerprobe/encoder.hpp"
#include "layerprobe/feature_store.hpp"
#include "layerprobe/metrics.hpp"

namespace layerprobe {

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamState {
  std::vector<float> m, v;
};

/// One bias-corrected Adam update; step counts from 1. Throws NumericalError on a
/// non-finite gradient.
void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state, std::int64_t step,
               const AdamConfig& config);

struct TrainConfig {
  float lr = 1e-4f;
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 10;
  float dropout_p = 0.2f;
  std::vector<std::uint64_t> seeds = {17, 42, 1337};
  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.999f;
  float adam_eps = 1e-8f;
  int truncate_layers = 0;  // 0 means every encoder layer
  bool cache_features = false;
  std::int64_t target_len = kWindowSamples;
  CropMode train_crop = CropMode::train_random;
  CropMode eval_crop = CropMode::eval_start;

  /// Every violated constraint, so callers can report them all at once. num_layers < 0 skips
  /// the layer-range check.
  std::vector<std::string> validation_errors(int num_layers = -1) const;
  void validate(int num_layers = -1) const;

  int layers_for(int num_layers) const { return truncate_layers == 0 ? num_layers : truncate_layers; }
  AdamConfig adam() const { return {lr, adam_beta1, adam_beta2, adam_eps}; }
};

/// Applies the training keys found in a flat key/value map and ignores the rest. Malformed
/// values are appended to errors.
TrainConfig train_config_from(const std::map<std::string, std::string>& kv, std::vector<std::string>& errors);

/// Early stopping on a monitored loss: stop once `patience` epochs pass without improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Records the next epoch's loss and returns true when it is a new best.
  bool update(double loss);
  bool should_stop() const { return epoch_ - best_epoch_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct EpochLosses {
  double train_loss = 0.0;
  double eval_loss = 0.0;
};

struct TrainRun {
  std::uint64_t seed = 0;
  int layers = 0;
  std::vector<EpochLosses> epoch_losses;
  int best_epoch = 0;  // 1-based
  LayerWeightVector weights;
  TensorMap backend_state;
  bool stopped_early = false;
  std::optional<std::string> failure;
  std::uint64_t encoder_checksum_before = 0;
  std::uint64_t encoder_checksum_after = 0;

  /// "agg.raw" plus the back-end's "backend.*" tensors.
  TensorMap parameters() const;
};

/// Loads "agg.raw" and the back-end state from a parameter map.
struct TrainedModel {
  LayerWeightVector weights;
  std::unique_ptr<Backend> backend;
};
TrainedModel restore_trained(const TensorMap& params, const BackendFactory& factory, std::size_t input_dim);

/// One training run. Initialization, batch order, crops and dropout all derive from `seed`.
TrainRun train_seed(const TrainConfig& config, std::uint64_t seed, const EncoderModel& model,
                    const DatasetSplit& train_split, const DatasetSplit& dev_split, const BackendFactory& factory,
                    FeatureStore& features, std::ostream* log = nullptr);

/// One run per configured seed, sharing a feature store.
std::vector<TrainRun> train(const TrainConfig& config, const EncoderModel& model, const DatasetSplit& train_split,
                            const DatasetSplit& dev_split, const BackendFactory& factory,
                            std::optional<std::filesystem::path> cache_dir = std::nullopt);

/// Mean cross-entropy over a split in eval mode.
double evaluate_loss(Backend& backend, const LayerWeightVector& weights, FeatureStore& features,
                     const DatasetSplit& split, CropMode crop);

/// Detection scores in split order, eval mode.
ScoreSet score_split(Backend& backend, const LayerWeightVector& weights, FeatureStore& features,
                     const DatasetSplit& split, CropMode crop);

}  // namespace layerprobe
