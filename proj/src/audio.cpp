#include "layerprobe/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "layerprobe/common.hpp"

namespace layerprobe {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xfffe;

template <typename T>
T read_le(const std::string& bytes, std::size_t pos) {
  static_assert(std::endian::native == std::endian::little, "WAV codec assumes a little-endian host");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

void write_wav(const std::filesystem::path& path, std::uint16_t format, int channels, int sample_rate,
               std::uint16_t bits, const std::string& data) {
  const std::uint16_t block_align = static_cast<std::uint16_t>(channels * bits / 8);
  std::string out = "RIFF";
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(36 + data.size()));
  out += "WAVEfmt ";
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, format);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(channels));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate) * block_align);
  put_le<std::uint16_t>(out, block_align);
  put_le<std::uint16_t>(out, bits);
  out += "data";
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.size()));
  out += data;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("write failed for " + path.string());
}

}  // namespace

AudioSegment decode_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open audio file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = std::move(ss).str();

  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0) {
    throw Error("unsupported codec: " + path.string() + " is not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t data_pos = 0, data_len = 0;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::size_t len = read_le<std::uint32_t>(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (len < 16 || body + len > bytes.size()) throw Error("corrupt fmt chunk in " + path.string());
      format = read_le<std::uint16_t>(bytes, body);
      channels = read_le<std::uint16_t>(bytes, body + 2);
      rate = read_le<std::uint32_t>(bytes, body + 4);
      bits = read_le<std::uint16_t>(bytes, body + 14);
      if (format == kFormatExtensible) {
        if (len < 26) throw Error("corrupt extensible fmt chunk in " + path.string());
        format = read_le<std::uint16_t>(bytes, body + 24);
      }
      have_fmt = true;
    } else if (id == "data") {
      data_pos = body;
      data_len = std::min(len, bytes.size() - body);
      have_data = true;
      break;
    }
    pos = body + len + (len & 1);
  }
  if (!have_fmt || !have_data) throw Error("unsupported codec: missing fmt or data chunk in " + path.string());

  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool float32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !float32) {
    throw Error("unsupported codec: format " + std::to_string(format) + " with " + std::to_string(bits) +
                " bits in " + path.string());
  }
  if (channels == 0) throw Error("unsupported codec: zero channels in " + path.string());
  if (rate != kSampleRate) {
    throw Error("sample rate mismatch: " + path.string() + " is " + std::to_string(rate) + " Hz, expected 16000");
  }

  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  const std::size_t frames = data_len / frame_bytes;
  if (frames == 0) throw Error("zero-length audio in " + path.string());

  AudioSegment seg;
  seg.sample_rate = static_cast<int>(rate);
  seg.utt_id = path.stem().string();
  seg.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    float acc = 0.0f;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t at = data_pos + i * frame_bytes + c * (bits / 8);
      acc += pcm16 ? static_cast<float>(read_le<std::int16_t>(bytes, at)) / 32768.0f : read_le<float>(bytes, at);
    }
    const float v = acc / static_cast<float>(channels);
    if (!std::isfinite(v)) throw Error("non-finite sample in " + path.string());
    seg.samples[i] = v;
  }
  return seg;
}

void write_wav_pcm16(const std::filesystem::path& path, std::span<const float> samples, int sample_rate) {
  std::string data;
  data.reserve(samples.size() * 2);
  for (float s : samples) {
    const float clipped = std::clamp(s, -1.0f, 1.0f);
    const long q = std::lround(static_cast<double>(clipped) * 32768.0);
    put_le<std::int16_t>(data, static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L)));
  }
  write_wav(path, kFormatPcm, 1, sample_rate, 16, data);
}

void write_wav_float32(const std::filesystem::path& path, std::span<const float> interleaved, int channels,
                       int sample_rate) {
  require(channels >= 1, "channel count must be positive");
  std::string data;
  for (float s : interleaved) put_le<float>(data, s);
  write_wav(path, kFormatFloat, channels, sample_rate, 32, data);
}

CropMode parse_crop_mode(const std::string& text) {
  if (text == "train_random") return CropMode::train_random;
  if (text == "eval_start") return CropMode::eval_start;
  if (text == "full") return CropMode::full;
  throw Error("unknown crop mode '" + text + "'");
}

std::string to_string(CropMode mode) {
  switch (mode) {
    case CropMode::train_random: return "train_random";
    case CropMode::eval_start: return "eval_start";
    case CropMode::full: return "full";
  }
  return "?";
}

namespace {
std::int64_t tiled_length(std::int64_t len, std::int64_t target_len) {
  return len >= target_len ? len : ((target_len + len - 1) / len) * len;
}
}  // namespace

bool crop_is_deterministic(std::int64_t input_len, std::int64_t target_len, CropMode mode) {
  if (mode != CropMode::train_random) return true;
  return tiled_length(input_len, target_len) == target_len;
}

AudioSegment crop_or_pad(const AudioSegment& segment, std::int64_t target_len, CropMode mode, Rng* rng) {
  if (target_len <= 0) throw Error("target_len must be positive");
  if (segment.samples.empty()) throw Error("cannot crop an empty segment");
  if (mode == CropMode::full) return segment;

  const auto len = static_cast<std::int64_t>(segment.samples.size());
  const std::int64_t tiled_len = tiled_length(len, target_len);
  std::int64_t start = 0;
  if (mode == CropMode::train_random && tiled_len > target_len) {
    require(rng != nullptr, "train_random cropping needs a random stream");
    start = static_cast<std::int64_t>(rng->uniform_index(static_cast<std::uint64_t>(tiled_len - target_len + 1)));
  }

  AudioSegment out;
  out.sample_rate = segment.sample_rate;
  out.utt_id = segment.utt_id;
  out.samples.resize(static_cast<std::size_t>(target_len));
  for (std::int64_t i = 0; i < target_len; ++i) {
    out.samples[static_cast<std::size_t>(i)] = segment.samples[static_cast<std::size_t>((start + i) % len)];
  }
  return out;
}

}  // namespace layerprobe
