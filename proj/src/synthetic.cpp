#include "layerprobe/synthetic.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "layerprobe/common.hpp"
#include "layerprobe/random.hpp"

namespace layerprobe {

namespace {

// Adds amp * sin(2 pi f n / sr + phase) using a rotating phasor instead of per-sample sin().
void add_sinusoid(std::vector<double>& out, double freq, double phase, double amp, int sample_rate) {
  const double w = 2.0 * std::numbers::pi * freq / sample_rate;
  const std::complex<double> step = std::polar(1.0, w);
  std::complex<double> z = std::polar(amp, phase);
  for (std::size_t n = 0; n < out.size(); ++n) {
    out[n] += z.imag();
    z *= step;
    if ((n & 4095) == 4095) z = std::polar(amp, std::arg(z));
  }
}

std::string utt_name(Label label, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05d", label == Label::bonafide ? "tone" : "noise", index);
  return buf;
}

}  // namespace

void SynthSpec::validate() const {
  require(n_per_class >= 1, "n_per_class must be at least 1");
  require(sample_rate > 0 && duration_samples > 0, "sample rate and duration must be positive");
  require(f0_lo_hz > 0.0 && f0_lo_hz <= f0_hi_hz, "bad fundamental range");
  require(partials >= 1, "partials must be at least 1");
  require(f0_hi_hz * partials < sample_rate / 2.0, "harmonics exceed Nyquist");
  require(band_lo_hz > 0.0 && band_lo_hz < band_hi_hz && band_hi_hz < sample_rate / 2.0, "bad noise band");
  require(f0_hi_hz * partials < band_lo_hz, "tone harmonics overlap the noise band");
  require(noise_components >= 1, "noise_components must be at least 1");
  require(peak_lo > 0.0 && peak_lo <= peak_hi && peak_hi <= 0.9, "peak range must lie in (0, 0.9]");
}

std::vector<float> synth_utterance(const SynthSpec& spec, Label label, int index) {
  Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(index) * 2 + static_cast<std::uint64_t>(label)));
  std::vector<double> acc(static_cast<std::size_t>(spec.duration_samples), 0.0);
  const double two_pi = 2.0 * std::numbers::pi;
  if (label == Label::bonafide) {
    const double f0 = rng.uniform(spec.f0_lo_hz, spec.f0_hi_hz);
    for (int k = 1; k <= spec.partials; ++k) {
      add_sinusoid(acc, f0 * k, rng.uniform(0.0, two_pi), 1.0 / k, spec.sample_rate);
    }
  } else {
    for (int k = 0; k < spec.noise_components; ++k) {
      const double f = rng.uniform(spec.band_lo_hz, spec.band_hi_hz);
      add_sinusoid(acc, f, rng.uniform(0.0, two_pi), rng.uniform(0.5, 1.0), spec.sample_rate);
    }
  }
  double peak = 0.0;
  for (double v : acc) peak = std::max(peak, std::abs(v));
  require(peak > 0.0, "silent synthetic utterance");
  const double scale = rng.uniform(spec.peak_lo, spec.peak_hi) / peak;
  std::vector<float> out(acc.size());
  for (std::size_t n = 0; n < acc.size(); ++n) out[n] = static_cast<float>(acc[n] * scale);
  return out;
}

SynthCorpus generate_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  SynthCorpus corpus;
  corpus.protocol = out_dir / "protocol.txt";
  for (int i = 0; i < spec.n_per_class; ++i) {
    for (Label label : {Label::bonafide, Label::spoof}) {
      ProtocolEntry e;
      e.utt_id = utt_name(label, i);
      e.label = label;
      e.audio_path = out_dir / (e.utt_id + ".wav");
      write_wav_pcm16(e.audio_path, synth_utterance(spec, label, i), spec.sample_rate);
      corpus.entries.push_back(std::move(e));
    }
  }
  std::ofstream out(corpus.protocol, std::ios::trunc);
  if (!out) throw Error("cannot write " + corpus.protocol.string());
  for (const auto& e : corpus.entries) out << e.utt_id << ' ' << to_string(e.label) << '\n';
  if (!out) throw Error("write failed for " + corpus.protocol.string());
  return corpus;
}

}  // namespace layerprobe
