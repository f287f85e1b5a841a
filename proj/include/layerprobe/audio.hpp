#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "layerprobe/random.hpp"

namespace layerprobe {

inline constexpr int kSampleRate = 16000;
/// Fixed training/evaluation window, about 4 s at 16 kHz.
inline constexpr std::int64_t kWindowSamples = 64600;

struct AudioSegment {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
  std::string utt_id;
};

/// Decodes 16-bit PCM or 32-bit float WAV. Channels are averaged to mono; only 16 kHz is accepted.
AudioSegment decode_wav(const std::filesystem::path& path);

/// Writes mono 16-bit PCM. Samples are clipped to [-1, 1) before quantization.
void write_wav_pcm16(const std::filesystem::path& path, std::span<const float> samples, int sample_rate = kSampleRate);
void write_wav_float32(const std::filesystem::path& path, std::span<const float> interleaved, int channels,
                       int sample_rate = kSampleRate);

enum class CropMode { train_random, eval_start, full };

CropMode parse_crop_mode(const std::string& text);
std::string to_string(CropMode mode);

/// Produces a window of exactly target_len samples (modes other than full). Short input is
/// tiled (concatenated with itself) until it covers the window. train_random draws the
/// window start from rng; eval_start anchors at sample 0; full returns the input unchanged.
AudioSegment crop_or_pad(const AudioSegment& segment, std::int64_t target_len, CropMode mode, Rng* rng = nullptr);

/// True when crop_or_pad has exactly one possible output for this input length, in which
/// case it consumes nothing from the random stream.
bool crop_is_deterministic(std::int64_t input_len, std::int64_t target_len, CropMode mode);

}  // namespace layerprobe
