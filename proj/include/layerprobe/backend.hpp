#pragma once

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "layerprobe/common.hpp"
#include "layerprobe/dataset.hpp"
#include "layerprobe/random.hpp"

namespace layerprobe {

enum class Mode { train, eval };

/// Two-class logits (bonafide, spoof) and the detection score logit[0] - logit[1].
template <typename Real>
struct BasicClassScores {
  std::array<Real, 2> logits{};
  Real score = 0;
};

using ClassScores = BasicClassScores<float>;

template <typename Real>
struct CrossEntropy {
  Real loss = 0;
  std::array<Real, 2> grad{};
};

/// -log softmax(logits)[label] via log-sum-exp; grad = softmax - onehot.
template <typename Real>
CrossEntropy<Real> cross_entropy(const std::array<Real, 2>& logits, Label label);

struct ParameterRef {
  std::string name;
  std::span<float> value;
  std::span<float> grad;
};

/// A trainable classifier mapping aggregated T x d features to two-class scores.
/// Stateful in the way training modules are: forward() keeps what backward() needs,
/// and backward() accumulates parameter gradients until zero_grad().
class Backend {
 public:
  virtual ~Backend() = default;

  virtual std::string name() const = 0;
  virtual std::size_t input_dim() const = 0;

  /// Train mode is a whole-batch operation (batch statistics); eval mode is per-utterance pure.
  virtual std::vector<ClassScores> forward(std::span<const MatrixF> batch, Mode mode, Rng& rng) = 0;

  /// Gradients of the loss w.r.t. each input matrix of the last forward() call.
  virtual std::vector<MatrixF> backward(std::span<const std::array<float, 2>> loss_grads) = 0;

  virtual std::vector<ParameterRef> parameters() = 0;
  virtual void zero_grad() = 0;

  /// All parameters (trainable and running statistics) keyed "backend.*".
  virtual TensorMap state() const = 0;
  virtual void load_state(const TensorMap& state) = 0;
};

using BackendFactory = std::function<std::unique_ptr<Backend>(std::size_t input_dim, Rng& init_rng)>;

/// Known back-ends: "ffn". Throws for anything else.
BackendFactory backend_factory(const std::string& name, float dropout_p = 0.2f);

}  // namespace layerprobe
