#pragma once

// Small dense kernels shared by the encoder. All accumulation is f32 with a fixed
// summation order, so results do not depend on compiler vectorization choices.

#include <cmath>
#include <cstddef>
#include <span>

#include "layerprobe/common.hpp"

namespace layerprobe::kernels {

/// Eight interleaved partial sums, combined pairwise at the end.
inline float dot(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  for (std::size_t j = 0; i < n; ++i, ++j) acc[j] += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

inline float gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752f)); }

/// y[t] = W x[t] + b with W stored [out, in].
inline MatrixF linear(const MatrixF& x, std::span<const float> weight, std::span<const float> bias) {
  const std::size_t in = x.cols();
  const std::size_t out = bias.size();
  require(weight.size() == out * in, "linear weight shape mismatch");
  MatrixF y(x.rows(), out);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const float* xt = x.data() + t * in;
    float* yt = y.data() + t * out;
    for (std::size_t o = 0; o < out; ++o) yt[o] = bias[o] + dot(weight.data() + o * in, xt, in);
  }
  return y;
}

/// Normalizes each row over its columns.
inline MatrixF layer_norm(const MatrixF& x, std::span<const float> gamma, std::span<const float> beta, float eps) {
  const std::size_t n = x.cols();
  require(gamma.size() == n && beta.size() == n, "layer norm parameter size mismatch");
  MatrixF y(x.rows(), n);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const float* xt = x.data() + t * n;
    float mean = 0.0f;
    for (std::size_t j = 0; j < n; ++j) mean += xt[j];
    mean /= static_cast<float>(n);
    float var = 0.0f;
    for (std::size_t j = 0; j < n; ++j) var += (xt[j] - mean) * (xt[j] - mean);
    var /= static_cast<float>(n);
    const float inv = 1.0f / std::sqrt(var + eps);
    float* yt = y.data() + t * n;
    for (std::size_t j = 0; j < n; ++j) yt[j] = (xt[j] - mean) * inv * gamma[j] + beta[j];
  }
  return y;
}

}  // namespace layerprobe::kernels
