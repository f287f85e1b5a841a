#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "layerprobe/audio.hpp"
#include "layerprobe/common.hpp"
#include "layerprobe/features.hpp"
#include "layerprobe/model_io.hpp"

namespace layerprobe {

/// Wiring tag written into container metadata. Containers declaring anything else are refused.
inline constexpr const char* kEncoderWiring = "prenorm-gelu-posconv/v1";

struct ConvLayerSpec {
  int channels = 512;
  int kernel = 1;
  int stride = 1;

  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

struct EncoderConfig {
  int num_layers = 12;
  int hidden_dim = 768;
  int num_heads = 12;
  int ffn_dim = 3072;
  std::vector<ConvLayerSpec> conv_stack = default_conv_stack();
  float layer_norm_eps = 1e-5f;
  /// Grouped convolution adding positional information before layer 1; kernel 0 disables it.
  int pos_conv_kernel = 128;
  int pos_conv_groups = 16;

  /// 512 channels; kernels 10,3,3,3,3,2,2; strides 5,2,2,2,2,2,2 (25 ms receptive field, 20 ms hop).
  static std::vector<ConvLayerSpec> default_conv_stack(int channels = 512);
  static EncoderConfig base();
  static EncoderConfig large();

  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

std::string encode_conv_stack(std::span<const ConvLayerSpec> stack);
std::vector<ConvLayerSpec> parse_conv_stack(const std::string& text);

Metadata encoder_metadata(const EncoderConfig& config, const std::string& family);
EncoderConfig encoder_config_from(const Metadata& metadata);

/// Frame count after the conv stack, applying floor((n - kernel) / stride + 1) per layer.
/// Throws when the input is shorter than the receptive field.
std::int64_t conv_output_length(std::span<const ConvLayerSpec> stack, std::int64_t num_samples);
std::int64_t receptive_field(std::span<const ConvLayerSpec> stack);

/// Every encoder tensor name and shape required by the architecture, in a fixed order.
std::vector<std::pair<std::string, std::vector<std::int64_t>>> parameter_inventory(const EncoderConfig& config);

/// Non-owning views of one transformer block's parameters. Linear weights are [out, in].
struct TransformerLayerParams {
  std::span<const float> attn_norm_weight, attn_norm_bias;
  std::span<const float> q_weight, q_bias, k_weight, k_bias, v_weight, v_bias, out_weight, out_bias;
  std::span<const float> ffn_norm_weight, ffn_norm_bias;
  std::span<const float> fc1_weight, fc1_bias, fc2_weight, fc2_bias;
};

/// Pre-norm block: x + MHSA(LN(x)), then + FFN(LN(.)) with a GELU FFN. Throws on NaN output.
MatrixF transformer_layer(const MatrixF& input, const TransformerLayerParams& params, const EncoderConfig& config);

/// Random frozen weights for desk-scale experiments, uniform in +-1/sqrt(fan_in).
TensorMap make_random_encoder_tensors(const EncoderConfig& config, std::uint64_t seed);

class EncoderModel {
 public:
  EncoderModel(EncoderConfig config, TensorMap tensors);

  static EncoderModel from_container(const ModelContainer& container);
  static EncoderModel load(const std::filesystem::path& path);

  const EncoderConfig& config() const { return config_; }
  const TensorMap& tensors() const { return tensors_; }
  int num_layers() const { return config_.num_layers; }
  int hidden_dim() const { return config_.hidden_dim; }

  /// Checksum of all encoder.* tensors, computed at load time.
  std::uint64_t checksum() const { return checksum_; }

  /// Conv front-end plus feature projection: samples -> T x d.
  MatrixF conv_features(std::span<const float> samples) const;

  /// Hidden states of layers 1..max_layers. Layers above max_layers are never computed.
  LayerFeatureStack encode(const AudioSegment& segment, int max_layers) const;

  /// Instrumentation: transformer-layer forward invocations and encode calls since the last reset.
  std::uint64_t layer_invocations() const { return counters_->layers.load(); }
  std::uint64_t encode_calls() const { return counters_->encodes.load(); }
  void reset_counters() const;

 private:
  struct ConvParams {
    std::vector<float> weight;  // [out][kernel][in], reordered so each window is one dot product
    std::span<const float> norm_weight, norm_bias;
  };
  struct Counters {
    std::atomic<std::uint64_t> layers{0};
    std::atomic<std::uint64_t> encodes{0};
  };

  const Tensor& param(const std::string& name) const;
  MatrixF add_positional(const MatrixF& x) const;

  EncoderConfig config_;
  TensorMap tensors_;
  std::vector<ConvParams> conv_;
  std::vector<TransformerLayerParams> layers_;
  std::uint64_t checksum_ = 0;
  std::unique_ptr<Counters> counters_ = std::make_unique<Counters>();
};

}  // namespace layerprobe
