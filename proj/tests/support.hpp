#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "layerprobe/encoder.hpp"
#include "layerprobe/random.hpp"

namespace testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "lp") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Small encoder on the default conv geometry (64600 samples -> 201 frames).
inline layerprobe::EncoderConfig toy_encoder_config(int layers, int hidden = 16, int channels = 8) {
  layerprobe::EncoderConfig c;
  c.num_layers = layers;
  c.hidden_dim = hidden;
  c.num_heads = 2;
  c.ffn_dim = 4 * hidden;
  c.conv_stack = layerprobe::EncoderConfig::default_conv_stack(channels);
  c.pos_conv_kernel = 16;
  c.pos_conv_groups = 4;
  return c;
}

inline std::vector<float> random_signal(std::size_t n, std::uint64_t seed, double amp = 0.5) {
  layerprobe::Rng rng(seed);
  std::vector<float> out(n);
  for (auto& v : out) v = static_cast<float>(rng.uniform(-amp, amp));
  return out;
}

struct BruteEer {
  double eer;
  double far;
  double frr;
};

/// Evaluates FAR/FRR at every candidate threshold with plain counting loops.
/// FRR(t) = #{bonafide < t}/nb, FAR(t) = #{spoof >= t}/ns; minimize |FAR - FRR|, then FAR + FRR,
/// then t. Rates are compared as cross-multiplied integers so the choice is exact.
inline BruteEer brute_force_eer(const std::vector<float>& bona, const std::vector<float>& spoof) {
  std::vector<double> cands = {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  for (float s : bona) cands.push_back(s);
  for (float s : spoof) cands.push_back(s);
  const long long nb = static_cast<long long>(bona.size()), ns = static_cast<long long>(spoof.size());
  bool have = false;
  long long best_diff = 0, best_sum = 0, best_rej = 0, best_acc = 0;
  double best_t = 0;
  for (double t : cands) {
    long long rej = 0, acc = 0;
    for (float s : bona) rej += (s < t);
    for (float s : spoof) acc += (s >= t);
    const long long diff = std::llabs(acc * nb - rej * ns);
    const long long sum = acc * nb + rej * ns;
    if (!have || diff < best_diff || (diff == best_diff && sum < best_sum) ||
        (diff == best_diff && sum == best_sum && t < best_t)) {
      have = true;
      best_diff = diff;
      best_sum = sum;
      best_rej = rej;
      best_acc = acc;
      best_t = t;
    }
  }
  const double frr = static_cast<double>(best_rej) / static_cast<double>(nb);
  const double far = static_cast<double>(best_acc) / static_cast<double>(ns);
  return {(far + frr) / 2.0, far, frr};
}

}  // namespace testing
