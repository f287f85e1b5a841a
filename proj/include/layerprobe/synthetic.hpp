#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "layerprobe/audio.hpp"
#include "layerprobe/dataset.hpp"

namespace layerprobe {

/// Two-class tone/noise corpus. Class a (bonafide) is a harmonic tone, class b (spoof) is
/// band-limited noise built from many random-phase sinusoids inside [band_lo_hz, band_hi_hz].
struct SynthSpec {
  int n_per_class = 4;
  std::uint64_t seed = 7;
  int sample_rate = kSampleRate;
  std::int64_t duration_samples = kWindowSamples;
  double f0_lo_hz = 120.0;
  double f0_hi_hz = 300.0;
  int partials = 3;
  double band_lo_hz = 2000.0;
  double band_hi_hz = 6000.0;
  int noise_components = 48;
  double peak_lo = 0.5;
  double peak_hi = 0.9;

  void validate() const;
};

/// Samples of one utterance; index selects an independent stream so files can be made in any order.
std::vector<float> synth_utterance(const SynthSpec& spec, Label label, int index);

struct SynthCorpus {
  std::filesystem::path protocol;
  std::vector<ProtocolEntry> entries;
};

/// Writes <out_dir>/<utt_id>.wav for every utterance and <out_dir>/protocol.txt ("utt_id label").
SynthCorpus generate_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace layerprobe
