#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "layerprobe/common.hpp"
#include "layerprobe/features.hpp"

namespace layerprobe {

/// Max-subtracted softmax. The normalizer is accumulated in double for both precisions.
template <typename Real>
std::vector<Real> softmax_normalize(std::span<const Real> raw) {
  require(!raw.empty(), "softmax of an empty weight vector");
  Real max_raw = raw[0];
  for (Real r : raw) {
    require(std::isfinite(static_cast<double>(r)), "non-finite layer weight");
    max_raw = std::max(max_raw, r);
  }
  std::vector<double> e(raw.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    e[i] = std::exp(static_cast<double>(raw[i]) - static_cast<double>(max_raw));
    denom += e[i];
  }
  std::vector<Real> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<Real>(e[i] / denom);
  return out;
}

/// Trainable per-layer logits; the aggregation uses their softmax.
struct LayerWeightVector {
  std::vector<float> raw;

  static LayerWeightVector ones(std::size_t layers) { return {std::vector<float>(layers, 1.0f)}; }
  std::size_t size() const { return raw.size(); }
  std::vector<float> normalized() const { return softmax_normalize<float>(raw); }
};

template <typename Real>
struct BasicAggregatedFeatures {
  Matrix<Real> matrix;
  std::size_t source_layers = 0;
};

using AggregatedFeatures = BasicAggregatedFeatures<float>;

/// sum_l normalized[l] * layers[l], accumulated in layer order.
template <typename Real>
Matrix<Real> aggregate_normalized(std::span<const Matrix<Real>> layers, std::span<const Real> normalized) {
  require(!layers.empty(), "no layers to aggregate");
  require(layers.size() == normalized.size(), "layer weight count does not match layer count");
  const auto& first = layers.front();
  Matrix<Real> out(first.rows(), first.cols());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    require(layers[l].same_shape(first), "layer shapes differ");
    const Real w = normalized[l];
    const Real* src = layers[l].data();
    Real* dst = out.data();
    if (l == 0) {
      for (std::size_t i = 0; i < out.size(); ++i) dst[i] = w * src[i];
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) dst[i] += w * src[i];
    }
  }
  return out;
}

template <typename Real>
BasicAggregatedFeatures<Real> aggregate(const BasicLayerStack<Real>& stack, std::span<const Real> raw) {
  check_stack_shapes(stack);
  const auto p = softmax_normalize<Real>(raw);
  return {aggregate_normalized<Real>(stack.layers, p), stack.depth()};
}

inline AggregatedFeatures aggregate(const LayerFeatureStack& stack, const LayerWeightVector& weights) {
  return aggregate<float>(stack, weights.raw);
}

/// d loss / d raw for loss depending on the aggregate through `upstream` (= d loss / d aggregate).
/// Features are frozen, so no feature gradient is produced.
template <typename Real>
std::vector<Real> grad_aggregate(std::span<const Matrix<Real>> layers, std::span<const Real> raw,
                                 const Matrix<Real>& upstream) {
  require(layers.size() == raw.size(), "layer weight count does not match layer count");
  const auto p = softmax_normalize<Real>(raw);
  std::vector<double> g_norm(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    require(layers[l].same_shape(upstream), "upstream gradient shape does not match layer shape");
    double acc = 0.0;
    for (std::size_t i = 0; i < upstream.size(); ++i) {
      acc += static_cast<double>(upstream.data()[i]) * static_cast<double>(layers[l].data()[i]);
    }
    g_norm[l] = acc;
  }
  // softmax Jacobian (diag(p) - p p^T) is symmetric
  double weighted = 0.0;
  for (std::size_t l = 0; l < p.size(); ++l) weighted += static_cast<double>(p[l]) * g_norm[l];
  std::vector<Real> g_raw(p.size());
  for (std::size_t l = 0; l < p.size(); ++l) g_raw[l] = static_cast<Real>(static_cast<double>(p[l]) * (g_norm[l] - weighted));
  return g_raw;
}

}  // namespace layerprobe
