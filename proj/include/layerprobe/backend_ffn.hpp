#pragma once

// FFN back-end: batch norm -> FF(128)+SeLU+dropout -> FF(128)+SeLU+dropout ->
// attentive statistical pooling (mean and std, 256) -> linear head (2 classes).
// The math is templated so gradient checks can run in double.

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "layerprobe/backend.hpp"
#include "layerprobe/common.hpp"
#include "layerprobe/random.hpp"

namespace layerprobe {

inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
inline constexpr double kSeluScale = 1.0507009873554804934193349852946;
inline constexpr std::size_t kBackendHiddenDim = 128;
inline constexpr double kPoolingEps = 1e-9;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename Real>
struct BackendParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = kBackendHiddenDim;
  std::vector<Real> bn_gamma, bn_beta, bn_running_mean, bn_running_var;
  Matrix<Real> ff1_weight;  // input_dim x hidden
  std::vector<Real> ff1_bias;
  Matrix<Real> ff2_weight;  // hidden x hidden
  std::vector<Real> ff2_bias;
  std::vector<Real> attn_weight;  // hidden -> one score per frame
  std::vector<Real> attn_bias;    // size 1
  Matrix<Real> head_weight;       // 2*hidden x 2
  std::vector<Real> head_bias;
  Real dropout_p = Real(0.2);

  /// Identity batch norm, everything else zero.
  static BackendParams zeros(std::size_t input_dim, std::size_t hidden_dim = kBackendHiddenDim);
  /// Linear weights uniform in +-sqrt(1/fan_in), biases zero, identity batch norm.
  static BackendParams initialize(std::size_t input_dim, Rng& rng, std::size_t hidden_dim = kBackendHiddenDim);

  /// Visits trainable tensors (everything except running statistics) in a fixed order.
  template <typename F>
  void for_each_trainable(F&& f) {
    f("bn.gamma", std::span<Real>(bn_gamma));
    f("bn.beta", std::span<Real>(bn_beta));
    f("ff1.weight", ff1_weight.values());
    f("ff1.bias", std::span<Real>(ff1_bias));
    f("ff2.weight", ff2_weight.values());
    f("ff2.bias", std::span<Real>(ff2_bias));
    f("attn.weight", std::span<Real>(attn_weight));
    f("attn.bias", std::span<Real>(attn_bias));
    f("head.weight", head_weight.values());
    f("head.bias", std::span<Real>(head_bias));
  }

  void validate() const;
};

template <typename Real>
struct PooledStats {
  std::vector<Real> alpha;   // attention weight per frame
  std::vector<Real> output;  // concat(mean, std), 2 * width
};

/// alpha = softmax_t(seq[t] . weight + bias); mean/std weighted by alpha; std = sqrt(max(var, 1e-9)).
template <typename Real>
PooledStats<Real> attentive_stat_pool(const Matrix<Real>& seq, std::span<const Real> weight, Real bias);

template <typename Real>
struct FfnCache {
  Mode mode = Mode::eval;
  std::vector<std::size_t> offsets;  // frame offset of each utterance; back() == total frames
  Matrix<Real> x_hat;                // batch-normalized input
  std::vector<Real> bn_inv_std;
  Matrix<Real> bn_out, z1, a1, z2, a2;
  Matrix<Real> mask1, mask2;  // inverted-dropout multipliers (train mode only)
  std::vector<PooledStats<Real>> pooled;
};

template <typename Real>
struct FfnForwardResult {
  std::vector<BasicClassScores<Real>> scores;
  FfnCache<Real> cache;
  /// Running statistics after this forward (unchanged in eval mode).
  std::vector<Real> running_mean, running_var;
};

template <typename Real>
FfnForwardResult<Real> ffn_forward(std::span<const Matrix<Real>> batch, const BackendParams<Real>& params, Mode mode,
                                   Rng& rng);

template <typename Real>
struct FfnBackwardResult {
  BackendParams<Real> grads;  // running statistics fields are left zero
  std::vector<Matrix<Real>> input_grads;
};

template <typename Real>
FfnBackwardResult<Real> ffn_backward(const FfnCache<Real>& cache, const BackendParams<Real>& params,
                                     std::span<const std::array<Real, 2>> loss_grads);

template <typename Real>
TensorMap backend_params_to_tensors(const BackendParams<Real>& params);
BackendParams<float> backend_params_from_tensors(const TensorMap& tensors);

class FfnBackend final : public Backend {
 public:
  explicit FfnBackend(BackendParams<float> params);

  std::string name() const override { return "ffn"; }
  std::size_t input_dim() const override { return params_.input_dim; }
  std::vector<ClassScores> forward(std::span<const MatrixF> batch, Mode mode, Rng& rng) override;
  std::vector<MatrixF> backward(std::span<const std::array<float, 2>> loss_grads) override;
  std::vector<ParameterRef> parameters() override;
  void zero_grad() override;
  TensorMap state() const override;
  void load_state(const TensorMap& state) override;

  const BackendParams<float>& params() const { return params_; }

 private:
  BackendParams<float> params_;
  BackendParams<float> grads_;
  std::unique_ptr<FfnCache<float>> cache_;
};

}  // namespace layerprobe
