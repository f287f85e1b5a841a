#include "layerprobe/backend_ffn.hpp"

#include <algorithm>
#include <cmath>

namespace layerprobe {

namespace {

template <typename Real>
Real selu(Real z) {
  return z > 0 ? Real(kSeluScale) * z : Real(kSeluScale * kSeluAlpha) * (std::exp(z) - Real(1));
}

template <typename Real>
Real selu_grad(Real z) {
  return z > 0 ? Real(kSeluScale) : Real(kSeluScale * kSeluAlpha) * std::exp(z);
}

/// y = x W + b, W stored [in, out].
template <typename Real>
Matrix<Real> dense(const Matrix<Real>& x, const Matrix<Real>& w, std::span<const Real> b) {
  const std::size_t in = w.rows(), out = w.cols();
  Matrix<Real> y(x.rows(), out);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    Real* yt = y.data() + t * out;
    std::copy(b.begin(), b.end(), yt);
    const Real* xt = x.data() + t * in;
    for (std::size_t i = 0; i < in; ++i) {
      const Real xi = xt[i];
      const Real* wi = w.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) yt[o] += xi * wi[o];
    }
  }
  return y;
}

/// Accumulates dW += x^T dy, db += sum dy; returns dx = dy W^T.
template <typename Real>
Matrix<Real> dense_backward(const Matrix<Real>& x, const Matrix<Real>& w, const Matrix<Real>& dy, Matrix<Real>& dw,
                            std::vector<Real>& db) {
  const std::size_t in = w.rows(), out = w.cols();
  Matrix<Real> dx(x.rows(), in);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const Real* dyt = dy.data() + t * out;
    const Real* xt = x.data() + t * in;
    for (std::size_t o = 0; o < out; ++o) db[o] += dyt[o];
    for (std::size_t i = 0; i < in; ++i) {
      Real* dwi = dw.data() + i * out;
      const Real* wi = w.data() + i * out;
      const Real xi = xt[i];
      Real acc = 0;
      for (std::size_t o = 0; o < out; ++o) {
        dwi[o] += xi * dyt[o];
        acc += dyt[o] * wi[o];
      }
      dx(t, i) = acc;
    }
  }
  return dx;
}

template <typename Real>
void check_finite(std::span<const Real> values, const char* what) {
  for (Real v : values) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericalError(std::string("non-finite value in back-end ") + what);
  }
}

template <typename Real>
std::vector<Real> to_vector(const Tensor& t) {
  return std::vector<Real>(t.values.begin(), t.values.end());
}

}  // namespace

template <typename Real>
CrossEntropy<Real> cross_entropy(const std::array<Real, 2>& logits, Label label) {
  const Real m = std::max(logits[0], logits[1]);
  const Real lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
  const std::size_t y = static_cast<std::size_t>(label);
  CrossEntropy<Real> ce;
  ce.loss = lse - logits[y];
  for (std::size_t c = 0; c < 2; ++c) ce.grad[c] = std::exp(logits[c] - lse) - (c == y ? Real(1) : Real(0));
  return ce;
}

template <typename Real>
BackendParams<Real> BackendParams<Real>::zeros(std::size_t input_dim, std::size_t hidden_dim) {
  require(input_dim >= 1 && hidden_dim >= 1, "back-end dimensions must be positive");
  BackendParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.bn_gamma.assign(input_dim, Real(1));
  p.bn_beta.assign(input_dim, Real(0));
  p.bn_running_mean.assign(input_dim, Real(0));
  p.bn_running_var.assign(input_dim, Real(1));
  p.ff1_weight = Matrix<Real>(input_dim, hidden_dim);
  p.ff1_bias.assign(hidden_dim, Real(0));
  p.ff2_weight = Matrix<Real>(hidden_dim, hidden_dim);
  p.ff2_bias.assign(hidden_dim, Real(0));
  p.attn_weight.assign(hidden_dim, Real(0));
  p.attn_bias.assign(1, Real(0));
  p.head_weight = Matrix<Real>(2 * hidden_dim, 2);
  p.head_bias.assign(2, Real(0));
  return p;
}

template <typename Real>
BackendParams<Real> BackendParams<Real>::initialize(std::size_t input_dim, Rng& rng, std::size_t hidden_dim) {
  auto p = zeros(input_dim, hidden_dim);
  auto fill = [&rng](std::span<Real> v, std::size_t fan_in) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (Real& x : v) x = static_cast<Real>(rng.uniform(-bound, bound));
  };
  fill(p.ff1_weight.values(), input_dim);
  fill(p.ff2_weight.values(), hidden_dim);
  fill(p.attn_weight, hidden_dim);
  fill(p.head_weight.values(), 2 * hidden_dim);
  return p;
}

template <typename Real>
void BackendParams<Real>::validate() const {
  const std::size_t d = input_dim, h = hidden_dim;
  require(bn_gamma.size() == d && bn_beta.size() == d && bn_running_mean.size() == d && bn_running_var.size() == d,
          "batch norm parameters do not match input_dim");
  require(ff1_weight.rows() == d && ff1_weight.cols() == h && ff1_bias.size() == h, "ff1 shape mismatch");
  require(ff2_weight.rows() == h && ff2_weight.cols() == h && ff2_bias.size() == h, "ff2 shape mismatch");
  require(attn_weight.size() == h && attn_bias.size() == 1, "attention pooling shape mismatch");
  require(head_weight.rows() == 2 * h && head_weight.cols() == 2 && head_bias.size() == 2, "head shape mismatch");
  require(dropout_p >= 0 && dropout_p < 1, "dropout_p must be in [0, 1)");
  for (Real v : bn_running_var) require(v >= 0, "negative running variance");
}

template <typename Real>
PooledStats<Real> attentive_stat_pool(const Matrix<Real>& seq, std::span<const Real> weight, Real bias) {
  const std::size_t T = seq.rows(), H = seq.cols();
  require(T >= 1, "pooling needs at least one frame");
  require(weight.size() == H, "pooling weight size does not match sequence width");

  PooledStats<Real> out;
  out.alpha.resize(T);
  Real max_score = -INFINITY;
  for (std::size_t t = 0; t < T; ++t) {
    Real s = bias;
    for (std::size_t j = 0; j < H; ++j) s += seq(t, j) * weight[j];
    out.alpha[t] = s;
    max_score = std::max(max_score, s);
  }
  Real denom = 0;
  for (auto& a : out.alpha) {
    a = std::exp(a - max_score);
    denom += a;
  }
  for (auto& a : out.alpha) a /= denom;

  out.output.assign(2 * H, Real(0));
  std::vector<Real> second(H, Real(0));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < H; ++j) {
      out.output[j] += out.alpha[t] * seq(t, j);
      second[j] += out.alpha[t] * seq(t, j) * seq(t, j);
    }
  }
  for (std::size_t j = 0; j < H; ++j) {
    const Real mean = out.output[j];
    out.output[H + j] = std::sqrt(std::max(second[j] - mean * mean, Real(kPoolingEps)));
  }
  return out;
}

template <typename Real>
FfnForwardResult<Real> ffn_forward(std::span<const Matrix<Real>> batch, const BackendParams<Real>& p, Mode mode,
                                   Rng& rng) {
  require(!batch.empty(), "empty batch");
  const std::size_t d = p.input_dim, H = p.hidden_dim;

  FfnForwardResult<Real> r;
  auto& c = r.cache;
  c.mode = mode;
  c.offsets.push_back(0);
  for (const auto& m : batch) {
    require(m.rows() >= 1, "utterance with no frames");
    require(m.cols() == d, "back-end input width does not match input_dim");
    c.offsets.push_back(c.offsets.back() + m.rows());
  }
  const std::size_t N = c.offsets.back();

  // Batch norm over every frame of every utterance in the batch.
  std::vector<Real> mean(d, Real(0)), var(d, Real(0));
  if (mode == Mode::train) {
    for (const auto& m : batch) {
      for (std::size_t t = 0; t < m.rows(); ++t) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += m(t, j);
      }
    }
    for (auto& v : mean) v /= static_cast<Real>(N);
    for (const auto& m : batch) {
      for (std::size_t t = 0; t < m.rows(); ++t) {
        for (std::size_t j = 0; j < d; ++j) var[j] += (m(t, j) - mean[j]) * (m(t, j) - mean[j]);
      }
    }
    for (auto& v : var) v /= static_cast<Real>(N);
    r.running_mean.resize(d);
    r.running_var.resize(d);
    const Real unbias = N > 1 ? static_cast<Real>(N) / static_cast<Real>(N - 1) : Real(1);
    for (std::size_t j = 0; j < d; ++j) {
      r.running_mean[j] = Real(1 - kBatchNormMomentum) * p.bn_running_mean[j] + Real(kBatchNormMomentum) * mean[j];
      r.running_var[j] = Real(1 - kBatchNormMomentum) * p.bn_running_var[j] + Real(kBatchNormMomentum) * var[j] * unbias;
    }
  } else {
    mean = p.bn_running_mean;
    var = p.bn_running_var;
    r.running_mean = p.bn_running_mean;
    r.running_var = p.bn_running_var;
  }
  c.bn_inv_std.resize(d);
  for (std::size_t j = 0; j < d; ++j) c.bn_inv_std[j] = Real(1) / std::sqrt(var[j] + Real(kBatchNormEps));

  c.x_hat = Matrix<Real>(N, d);
  c.bn_out = Matrix<Real>(N, d);
  for (std::size_t u = 0; u < batch.size(); ++u) {
    for (std::size_t t = 0; t < batch[u].rows(); ++t) {
      const std::size_t row = c.offsets[u] + t;
      for (std::size_t j = 0; j < d; ++j) {
        const Real xh = (batch[u](t, j) - mean[j]) * c.bn_inv_std[j];
        c.x_hat(row, j) = xh;
        c.bn_out(row, j) = p.bn_gamma[j] * xh + p.bn_beta[j];
      }
    }
  }

  auto activate = [&](const Matrix<Real>& z, Matrix<Real>& mask) {
    Matrix<Real> a(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.size(); ++i) a.values()[i] = selu(z.values()[i]);
    if (mode == Mode::train) {
      mask = Matrix<Real>(z.rows(), z.cols());
      const Real keep = Real(1) / (Real(1) - p.dropout_p);
      for (std::size_t i = 0; i < z.size(); ++i) {
        mask.values()[i] = rng.bernoulli(static_cast<double>(p.dropout_p)) ? Real(0) : keep;
        a.values()[i] *= mask.values()[i];
      }
    }
    return a;
  };
  c.z1 = dense(c.bn_out, p.ff1_weight, std::span<const Real>(p.ff1_bias));
  c.a1 = activate(c.z1, c.mask1);
  c.z2 = dense(c.a1, p.ff2_weight, std::span<const Real>(p.ff2_bias));
  c.a2 = activate(c.z2, c.mask2);
  check_finite<Real>(c.a2.values(), "hidden activations");

  for (std::size_t u = 0; u < batch.size(); ++u) {
    const std::size_t T = c.offsets[u + 1] - c.offsets[u];
    Matrix<Real> seq(T, H, std::vector<Real>(c.a2.data() + c.offsets[u] * H, c.a2.data() + c.offsets[u + 1] * H));
    auto pooled = attentive_stat_pool<Real>(seq, p.attn_weight, p.attn_bias[0]);
    BasicClassScores<Real> s;
    for (std::size_t k = 0; k < 2; ++k) {
      Real acc = p.head_bias[k];
      for (std::size_t i = 0; i < 2 * H; ++i) acc += pooled.output[i] * p.head_weight(i, k);
      s.logits[k] = acc;
    }
    s.score = s.logits[0] - s.logits[1];
    check_finite<Real>(s.logits, "logits");
    r.scores.push_back(s);
    c.pooled.push_back(std::move(pooled));
  }
  return r;
}

template <typename Real>
FfnBackwardResult<Real> ffn_backward(const FfnCache<Real>& c, const BackendParams<Real>& p,
                                     std::span<const std::array<Real, 2>> loss_grads) {
  const std::size_t batch = c.pooled.size();
  require(loss_grads.size() == batch, "loss gradient count does not match cached batch");
  require(c.x_hat.cols() == p.input_dim && c.a2.cols() == p.hidden_dim, "cache does not match parameters");
  const std::size_t d = p.input_dim, H = p.hidden_dim;
  const std::size_t N = c.offsets.back();

  FfnBackwardResult<Real> r;
  auto& g = r.grads;
  g = BackendParams<Real>::zeros(d, H);
  std::fill(g.bn_gamma.begin(), g.bn_gamma.end(), Real(0));
  std::fill(g.bn_running_var.begin(), g.bn_running_var.end(), Real(0));
  g.dropout_p = p.dropout_p;

  Matrix<Real> da2(N, H);
  for (std::size_t u = 0; u < batch; ++u) {
    const auto& pooled = c.pooled[u];
    const auto& dl = loss_grads[u];
    std::vector<Real> dpool(2 * H);
    for (std::size_t k = 0; k < 2; ++k) g.head_bias[k] += dl[k];
    for (std::size_t i = 0; i < 2 * H; ++i) {
      g.head_weight(i, 0) += pooled.output[i] * dl[0];
      g.head_weight(i, 1) += pooled.output[i] * dl[1];
      dpool[i] = p.head_weight(i, 0) * dl[0] + p.head_weight(i, 1) * dl[1];
    }

    // Through std = sqrt(max(m2 - mean^2, eps)); the clamp has zero gradient.
    const std::size_t r0 = c.offsets[u];
    const std::size_t T = c.offsets[u + 1] - r0;
    std::vector<Real> d_mean(H), d_second(H);
    for (std::size_t j = 0; j < H; ++j) {
      const Real mean = pooled.output[j];
      const Real sd = pooled.output[H + j];
      const Real var_raw = sd * sd;
      Real d_var = 0;
      if (var_raw > Real(kPoolingEps)) d_var = dpool[H + j] * Real(0.5) / sd;
      d_second[j] = d_var;
      d_mean[j] = dpool[j] - Real(2) * mean * d_var;
    }
    std::vector<Real> d_alpha(T, Real(0));
    for (std::size_t t = 0; t < T; ++t) {
      const Real* h = c.a2.data() + (r0 + t) * H;
      Real* dh = da2.data() + (r0 + t) * H;
      const Real a = pooled.alpha[t];
      Real acc = 0;
      for (std::size_t j = 0; j < H; ++j) {
        acc += d_mean[j] * h[j] + d_second[j] * h[j] * h[j];
        dh[j] = a * (d_mean[j] + Real(2) * h[j] * d_second[j]);
      }
      d_alpha[t] = acc;
    }
    Real weighted = 0;
    for (std::size_t t = 0; t < T; ++t) weighted += pooled.alpha[t] * d_alpha[t];
    for (std::size_t t = 0; t < T; ++t) {
      const Real ds = pooled.alpha[t] * (d_alpha[t] - weighted);
      const Real* h = c.a2.data() + (r0 + t) * H;
      Real* dh = da2.data() + (r0 + t) * H;
      g.attn_bias[0] += ds;
      for (std::size_t j = 0; j < H; ++j) {
        g.attn_weight[j] += ds * h[j];
        dh[j] += ds * p.attn_weight[j];
      }
    }
  }

  auto through_activation = [&](Matrix<Real> da, const Matrix<Real>& z, const Matrix<Real>& mask) {
    for (std::size_t i = 0; i < da.size(); ++i) {
      Real v = da.values()[i];
      if (c.mode == Mode::train) v *= mask.values()[i];
      da.values()[i] = v * selu_grad(z.values()[i]);
    }
    return da;
  };
  const Matrix<Real> dz2 = through_activation(std::move(da2), c.z2, c.mask2);
  const Matrix<Real> da1 = dense_backward(c.a1, p.ff2_weight, dz2, g.ff2_weight, g.ff2_bias);
  const Matrix<Real> dz1 = through_activation(da1, c.z1, c.mask1);
  const Matrix<Real> dbn = dense_backward(c.bn_out, p.ff1_weight, dz1, g.ff1_weight, g.ff1_bias);

  Matrix<Real> dx(N, d);
  std::vector<Real> sum_dxh(d, Real(0)), sum_dxh_xh(d, Real(0));
  for (std::size_t row = 0; row < N; ++row) {
    for (std::size_t j = 0; j < d; ++j) {
      const Real dy = dbn(row, j);
      g.bn_gamma[j] += dy * c.x_hat(row, j);
      g.bn_beta[j] += dy;
      const Real dxh = dy * p.bn_gamma[j];
      dx(row, j) = dxh;
      sum_dxh[j] += dxh;
      sum_dxh_xh[j] += dxh * c.x_hat(row, j);
    }
  }
  const Real n = static_cast<Real>(N);
  for (std::size_t row = 0; row < N; ++row) {
    for (std::size_t j = 0; j < d; ++j) {
      if (c.mode == Mode::train) {
        dx(row, j) = c.bn_inv_std[j] / n * (n * dx(row, j) - sum_dxh[j] - c.x_hat(row, j) * sum_dxh_xh[j]);
      } else {
        dx(row, j) *= c.bn_inv_std[j];
      }
    }
  }

  for (std::size_t u = 0; u < batch; ++u) {
    const std::size_t T = c.offsets[u + 1] - c.offsets[u];
    r.input_grads.emplace_back(T, d,
                               std::vector<Real>(dx.data() + c.offsets[u] * d, dx.data() + c.offsets[u + 1] * d));
  }
  return r;
}

template <typename Real>
TensorMap backend_params_to_tensors(const BackendParams<Real>& p) {
  auto vec = [](const std::vector<Real>& v) {
    return Tensor::vector(std::vector<float>(v.begin(), v.end()));
  };
  auto mat = [](const Matrix<Real>& m) { return Tensor::from_matrix(matrix_cast<float>(m)); };
  return {
      {"backend.bn.gamma", vec(p.bn_gamma)},
      {"backend.bn.beta", vec(p.bn_beta)},
      {"backend.bn.running_mean", vec(p.bn_running_mean)},
      {"backend.bn.running_var", vec(p.bn_running_var)},
      {"backend.ff1.weight", mat(p.ff1_weight)},
      {"backend.ff1.bias", vec(p.ff1_bias)},
      {"backend.ff2.weight", mat(p.ff2_weight)},
      {"backend.ff2.bias", vec(p.ff2_bias)},
      {"backend.attn.weight", vec(p.attn_weight)},
      {"backend.attn.bias", vec(p.attn_bias)},
      {"backend.head.weight", mat(p.head_weight)},
      {"backend.head.bias", vec(p.head_bias)},
      {"backend.dropout_p", Tensor::vector({static_cast<float>(p.dropout_p)})},
  };
}

BackendParams<float> backend_params_from_tensors(const TensorMap& tensors) {
  auto get = [&tensors](const std::string& name) -> const Tensor& {
    auto it = tensors.find("backend." + name);
    if (it == tensors.end()) throw Error("back-end tensor missing: backend." + name);
    return it->second;
  };
  BackendParams<float> p;
  p.bn_gamma = to_vector<float>(get("bn.gamma"));
  p.input_dim = p.bn_gamma.size();
  p.bn_beta = to_vector<float>(get("bn.beta"));
  p.bn_running_mean = to_vector<float>(get("bn.running_mean"));
  p.bn_running_var = to_vector<float>(get("bn.running_var"));
  p.ff1_weight = get("ff1.weight").to_matrix();
  p.hidden_dim = p.ff1_weight.cols();
  p.ff1_bias = to_vector<float>(get("ff1.bias"));
  p.ff2_weight = get("ff2.weight").to_matrix();
  p.ff2_bias = to_vector<float>(get("ff2.bias"));
  p.attn_weight = to_vector<float>(get("attn.weight"));
  p.attn_bias = to_vector<float>(get("attn.bias"));
  p.head_weight = get("head.weight").to_matrix();
  p.head_bias = to_vector<float>(get("head.bias"));
  p.dropout_p = get("dropout_p").values.at(0);
  p.validate();
  return p;
}

FfnBackend::FfnBackend(BackendParams<float> params) : params_(std::move(params)) {
  params_.validate();
  grads_ = BackendParams<float>::zeros(params_.input_dim, params_.hidden_dim);
  zero_grad();
}

std::vector<ClassScores> FfnBackend::forward(std::span<const MatrixF> batch, Mode mode, Rng& rng) {
  auto result = ffn_forward<float>(batch, params_, mode, rng);
  if (mode == Mode::train) {
    params_.bn_running_mean = std::move(result.running_mean);
    params_.bn_running_var = std::move(result.running_var);
    cache_ = std::make_unique<FfnCache<float>>(std::move(result.cache));
  } else {
    cache_.reset();
  }
  return std::move(result.scores);
}

std::vector<MatrixF> FfnBackend::backward(std::span<const std::array<float, 2>> loss_grads) {
  require(cache_ != nullptr, "backward() needs a preceding train-mode forward()");
  auto result = ffn_backward<float>(*cache_, params_, loss_grads);
  std::vector<std::span<float>> dst;
  grads_.for_each_trainable([&dst](const char*, std::span<float> v) { dst.push_back(v); });
  std::size_t k = 0;
  result.grads.for_each_trainable([&](const char*, std::span<float> v) {
    auto& out = dst[k++];
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += v[i];
  });
  return std::move(result.input_grads);
}

std::vector<ParameterRef> FfnBackend::parameters() {
  std::vector<std::span<float>> grads;
  grads_.for_each_trainable([&grads](const char*, std::span<float> v) { grads.push_back(v); });
  std::vector<ParameterRef> refs;
  params_.for_each_trainable([&](const char* name, std::span<float> v) {
    refs.push_back({std::string("backend.") + name, v, grads[refs.size()]});
  });
  return refs;
}

void FfnBackend::zero_grad() {
  grads_.for_each_trainable([](const char*, std::span<float> v) { std::fill(v.begin(), v.end(), 0.0f); });
}

TensorMap FfnBackend::state() const { return backend_params_to_tensors(params_); }

void FfnBackend::load_state(const TensorMap& state) {
  auto p = backend_params_from_tensors(state);
  require(p.input_dim == params_.input_dim, "back-end state input_dim mismatch");
  params_ = std::move(p);
  grads_ = BackendParams<float>::zeros(params_.input_dim, params_.hidden_dim);
  zero_grad();
  cache_.reset();
}

BackendFactory backend_factory(const std::string& name, float dropout_p) {
  if (name == "ffn") {
    return [dropout_p](std::size_t input_dim, Rng& rng) -> std::unique_ptr<Backend> {
      auto params = BackendParams<float>::initialize(input_dim, rng);
      params.dropout_p = dropout_p;
      return std::make_unique<FfnBackend>(std::move(params));
    };
  }
  throw Error("unknown back-end '" + name + "' (available: ffn)");
}

#define LAYERPROBE_INSTANTIATE(Real)                                                                          \
  template CrossEntropy<Real> cross_entropy<Real>(const std::array<Real, 2>&, Label);                       \
  template struct BackendParams<Real>;                                                                       \
  template PooledStats<Real> attentive_stat_pool<Real>(const Matrix<Real>&, std::span<const Real>, Real);    \
  template FfnForwardResult<Real> ffn_forward<Real>(std::span<const Matrix<Real>>, const BackendParams<Real>&, \
                                                    Mode, Rng&);                                            \
  template FfnBackwardResult<Real> ffn_backward<Real>(const FfnCache<Real>&, const BackendParams<Real>&,     \
                                                      std::span<const std::array<Real, 2>>);                 \
  template TensorMap backend_params_to_tensors<Real>(const BackendParams<Real>&);

LAYERPROBE_INSTANTIATE(float)
LAYERPROBE_INSTANTIATE(double)

#undef LAYERPROBE_INSTANTIATE

}  // namespace layerprobe
