#include "layerprobe/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "layerprobe/kernels.hpp"
#include "layerprobe/random.hpp"

namespace layerprobe {

namespace {

std::string layer_prefix(int l) { return "encoder.layer." + std::to_string(l) + "."; }

std::string format_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

int parse_int(const Metadata& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw Error("encoder metadata lacks '" + key + "'");
  try {
    std::size_t used = 0;
    int v = std::stoi(it->second, &used);
    if (used == it->second.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error("encoder metadata '" + key + "' is not an integer: " + it->second);
}

}  // namespace

std::vector<ConvLayerSpec> EncoderConfig::default_conv_stack(int channels) {
  const int kernels[] = {10, 3, 3, 3, 3, 2, 2};
  const int strides[] = {5, 2, 2, 2, 2, 2, 2};
  std::vector<ConvLayerSpec> stack;
  for (int i = 0; i < 7; ++i) stack.push_back({channels, kernels[i], strides[i]});
  return stack;
}

EncoderConfig EncoderConfig::base() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::large() {
  EncoderConfig c;
  c.num_layers = 24;
  c.hidden_dim = 1024;
  c.num_heads = 16;
  c.ffn_dim = 4096;
  return c;
}

void EncoderConfig::validate() const {
  require(num_layers >= 1, "encoder needs at least one transformer layer");
  require(hidden_dim >= 2, "hidden_dim must be at least 2");
  require(num_heads >= 1 && hidden_dim % num_heads == 0, "hidden_dim must be divisible by num_heads");
  require(ffn_dim >= 1, "ffn_dim must be positive");
  require(!conv_stack.empty(), "conv_stack must not be empty");
  for (const auto& c : conv_stack) {
    require(c.channels >= 1 && c.kernel >= 1 && c.stride >= 1, "conv layer needs positive channels, kernel, stride");
  }
  require(layer_norm_eps > 0.0f, "layer_norm_eps must be positive");
  require(pos_conv_kernel >= 0, "pos_conv_kernel must be non-negative");
  if (pos_conv_kernel > 0) {
    require(pos_conv_groups >= 1 && hidden_dim % pos_conv_groups == 0,
            "hidden_dim must be divisible by pos_conv_groups");
  }
}

std::string encode_conv_stack(std::span<const ConvLayerSpec> stack) {
  std::string s;
  for (const auto& c : stack) {
    if (!s.empty()) s += ",";
    s += std::to_string(c.channels) + ":" + std::to_string(c.kernel) + ":" + std::to_string(c.stride);
  }
  return s;
}

std::vector<ConvLayerSpec> parse_conv_stack(const std::string& text) {
  std::vector<ConvLayerSpec> stack;
  std::istringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    ConvLayerSpec c;
    char sep1 = 0, sep2 = 0;
    std::istringstream is(item);
    if (!(is >> c.channels >> sep1 >> c.kernel >> sep2 >> c.stride) || sep1 != ':' || sep2 != ':') {
      throw Error("malformed conv_stack entry '" + item + "' (expected channels:kernel:stride)");
    }
    stack.push_back(c);
  }
  return stack;
}

Metadata encoder_metadata(const EncoderConfig& config, const std::string& family) {
  return {
      {"family", family},
      {"num_layers", std::to_string(config.num_layers)},
      {"hidden_dim", std::to_string(config.hidden_dim)},
      {"num_heads", std::to_string(config.num_heads)},
      {"ffn_dim", std::to_string(config.ffn_dim)},
      {"conv_stack", encode_conv_stack(config.conv_stack)},
      {"layer_norm_eps", format_float(config.layer_norm_eps)},
      {"pos_conv_kernel", std::to_string(config.pos_conv_kernel)},
      {"pos_conv_groups", std::to_string(config.pos_conv_groups)},
      {"wiring", kEncoderWiring},
  };
}

EncoderConfig encoder_config_from(const Metadata& m) {
  auto wiring = m.find("wiring");
  if (wiring == m.end() || wiring->second != kEncoderWiring) {
    throw Error("unsupported encoder wiring '" + (wiring == m.end() ? std::string("<none>") : wiring->second) +
                "'; expected " + kEncoderWiring);
  }
  EncoderConfig c;
  c.num_layers = parse_int(m, "num_layers");
  c.hidden_dim = parse_int(m, "hidden_dim");
  c.num_heads = parse_int(m, "num_heads");
  c.ffn_dim = parse_int(m, "ffn_dim");
  auto conv = m.find("conv_stack");
  if (conv == m.end()) throw Error("encoder metadata lacks 'conv_stack'");
  c.conv_stack = parse_conv_stack(conv->second);
  if (auto eps = m.find("layer_norm_eps"); eps != m.end()) c.layer_norm_eps = std::stof(eps->second);
  c.pos_conv_kernel = parse_int(m, "pos_conv_kernel");
  c.pos_conv_groups = parse_int(m, "pos_conv_groups");
  c.validate();
  return c;
}

std::int64_t conv_output_length(std::span<const ConvLayerSpec> stack, std::int64_t num_samples) {
  std::int64_t n = num_samples;
  for (const auto& c : stack) {
    if (n < c.kernel) {
      throw Error("input too short: " + std::to_string(num_samples) + " samples, receptive field is " +
                  std::to_string(receptive_field(stack)));
    }
    n = (n - c.kernel) / c.stride + 1;
  }
  return n;
}

std::int64_t receptive_field(std::span<const ConvLayerSpec> stack) {
  std::int64_t field = 1;
  std::int64_t jump = 1;
  for (const auto& c : stack) {
    field += (c.kernel - 1) * jump;
    jump *= c.stride;
  }
  return field;
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> parameter_inventory(const EncoderConfig& config) {
  config.validate();
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> inv;
  std::int64_t in_ch = 1;
  for (std::size_t i = 0; i < config.conv_stack.size(); ++i) {
    const auto& c = config.conv_stack[i];
    const std::string p = "encoder.conv." + std::to_string(i) + ".";
    inv.push_back({p + "weight", {c.channels, in_ch, c.kernel}});
    inv.push_back({p + "bias", {c.channels}});
    inv.push_back({p + "norm.weight", {c.channels}});
    inv.push_back({p + "norm.bias", {c.channels}});
    in_ch = c.channels;
  }
  const std::int64_t d = config.hidden_dim;
  const std::int64_t f = config.ffn_dim;
  inv.push_back({"encoder.proj.norm.weight", {in_ch}});
  inv.push_back({"encoder.proj.norm.bias", {in_ch}});
  inv.push_back({"encoder.proj.weight", {d, in_ch}});
  inv.push_back({"encoder.proj.bias", {d}});
  if (config.pos_conv_kernel > 0) {
    inv.push_back({"encoder.pos_conv.weight", {d, d / config.pos_conv_groups, config.pos_conv_kernel}});
    inv.push_back({"encoder.pos_conv.bias", {d}});
  }
  for (int l = 1; l <= config.num_layers; ++l) {
    const std::string p = layer_prefix(l);
    inv.push_back({p + "attn_norm.weight", {d}});
    inv.push_back({p + "attn_norm.bias", {d}});
    for (const char* proj : {"q", "k", "v", "out"}) {
      inv.push_back({p + "attn." + proj + ".weight", {d, d}});
      inv.push_back({p + "attn." + proj + ".bias", {d}});
    }
    inv.push_back({p + "ffn_norm.weight", {d}});
    inv.push_back({p + "ffn_norm.bias", {d}});
    inv.push_back({p + "ffn.fc1.weight", {f, d}});
    inv.push_back({p + "ffn.fc1.bias", {f}});
    inv.push_back({p + "ffn.fc2.weight", {d, f}});
    inv.push_back({p + "ffn.fc2.bias", {d}});
  }
  return inv;
}

MatrixF transformer_layer(const MatrixF& input, const TransformerLayerParams& p, const EncoderConfig& config) {
  const std::size_t T = input.rows();
  const std::size_t d = input.cols();
  require(d == static_cast<std::size_t>(config.hidden_dim), "transformer input width does not match hidden_dim");
  require(T >= 1, "transformer input has no frames");
  const std::size_t heads = static_cast<std::size_t>(config.num_heads);
  const std::size_t hd = d / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  const MatrixF h = kernels::layer_norm(input, p.attn_norm_weight, p.attn_norm_bias, config.layer_norm_eps);
  const MatrixF q = kernels::linear(h, p.q_weight, p.q_bias);
  const MatrixF k = kernels::linear(h, p.k_weight, p.k_bias);
  const MatrixF v = kernels::linear(h, p.v_weight, p.v_bias);

  MatrixF context(T, d);
  std::vector<float> scores(T);
  for (std::size_t head = 0; head < heads; ++head) {
    const std::size_t off = head * hd;
    for (std::size_t t = 0; t < T; ++t) {
      const float* qt = q.data() + t * d + off;
      float max_score = -INFINITY;
      for (std::size_t s = 0; s < T; ++s) {
        scores[s] = kernels::dot(qt, k.data() + s * d + off, hd) * scale;
        max_score = std::max(max_score, scores[s]);
      }
      float denom = 0.0f;
      for (std::size_t s = 0; s < T; ++s) {
        scores[s] = std::exp(scores[s] - max_score);
        denom += scores[s];
      }
      float* ct = context.data() + t * d + off;
      for (std::size_t s = 0; s < T; ++s) {
        const float w = scores[s] / denom;
        const float* vs = v.data() + s * d + off;
        for (std::size_t j = 0; j < hd; ++j) ct[j] += w * vs[j];
      }
    }
  }

  MatrixF out = kernels::linear(context, p.out_weight, p.out_bias);
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += input.values()[i];

  const MatrixF h2 = kernels::layer_norm(out, p.ffn_norm_weight, p.ffn_norm_bias, config.layer_norm_eps);
  MatrixF inner = kernels::linear(h2, p.fc1_weight, p.fc1_bias);
  for (float& x : inner.values()) x = kernels::gelu(x);
  const MatrixF ffn = kernels::linear(inner, p.fc2_weight, p.fc2_bias);
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += ffn.values()[i];

  for (float x : out.values()) {
    if (std::isnan(x)) throw Error("transformer layer produced NaN (corrupt weights?)");
  }
  return out;
}

TensorMap make_random_encoder_tensors(const EncoderConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  const auto inventory = parameter_inventory(config);
  const std::map<std::string, std::vector<std::int64_t>> shapes(inventory.begin(), inventory.end());
  TensorMap tensors;
  for (const auto& [name, shape] : inventory) {
    Tensor t;
    t.shape = shape;
    t.values.resize(static_cast<std::size_t>(t.element_count()));
    if (name.find("norm.") != std::string::npos) {
      const float fill = name.ends_with("weight") ? 1.0f : 0.0f;
      std::fill(t.values.begin(), t.values.end(), fill);
    } else {
      // fan-in: every non-output dim of the owning weight
      const auto& weight_shape = shapes.at(name.substr(0, name.rfind('.')) + ".weight");
      std::int64_t fan_in = 1;
      for (std::size_t i = 1; i < weight_shape.size(); ++i) fan_in *= weight_shape[i];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (float& v : t.values) v = static_cast<float>(rng.uniform(-bound, bound));
    }
    tensors.emplace(name, std::move(t));
  }
  return tensors;
}

EncoderModel::EncoderModel(EncoderConfig config, TensorMap tensors) : config_(std::move(config)) {
  config_.validate();
  std::set<std::string> required;
  for (auto& [name, shape] : parameter_inventory(config_)) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("encoder tensor missing: " + name);
    if (it->second.shape != shape) {
      throw Error("shape mismatch for " + name + ": got " + shape_string(it->second.shape) + ", expected " +
                  shape_string(shape));
    }
    required.insert(name);
  }
  for (auto& [name, t] : tensors) {
    if (name.starts_with("encoder.")) {
      if (!required.count(name)) throw Error("unexpected encoder tensor: " + name);
      tensors_.emplace(name, std::move(t));
    }
  }
  checksum_ = tensor_checksum(tensors_, "encoder.");

  std::int64_t in_ch = 1;
  for (std::size_t i = 0; i < config_.conv_stack.size(); ++i) {
    const auto& spec = config_.conv_stack[i];
    const std::string p = "encoder.conv." + std::to_string(i) + ".";
    const auto& w = param(p + "weight").values;
    ConvParams cp;
    cp.weight.resize(w.size());
    for (int o = 0; o < spec.channels; ++o) {
      for (std::int64_t c = 0; c < in_ch; ++c) {
        for (int k = 0; k < spec.kernel; ++k) {
          cp.weight[(static_cast<std::size_t>(o) * spec.kernel + k) * in_ch + c] =
              w[(static_cast<std::size_t>(o) * in_ch + c) * spec.kernel + k];
        }
      }
    }
    cp.norm_weight = param(p + "norm.weight").values;
    cp.norm_bias = param(p + "norm.bias").values;
    conv_.push_back(std::move(cp));
    in_ch = spec.channels;
  }

  for (int l = 1; l <= config_.num_layers; ++l) {
    const std::string p = layer_prefix(l);
    auto v = [&](const std::string& n) { return std::span<const float>(param(p + n).values); };
    layers_.push_back({v("attn_norm.weight"), v("attn_norm.bias"), v("attn.q.weight"), v("attn.q.bias"),
                       v("attn.k.weight"), v("attn.k.bias"), v("attn.v.weight"), v("attn.v.bias"),
                       v("attn.out.weight"), v("attn.out.bias"), v("ffn_norm.weight"), v("ffn_norm.bias"),
                       v("ffn.fc1.weight"), v("ffn.fc1.bias"), v("ffn.fc2.weight"), v("ffn.fc2.bias")});
  }
}

EncoderModel EncoderModel::from_container(const ModelContainer& container) {
  TensorMap encoder_tensors;
  for (const auto& [name, t] : container.tensors) {
    if (name.starts_with("encoder.")) encoder_tensors.emplace(name, t);
  }
  return EncoderModel(encoder_config_from(container.metadata), std::move(encoder_tensors));
}

EncoderModel EncoderModel::load(const std::filesystem::path& path) { return from_container(read_container(path)); }

const Tensor& EncoderModel::param(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error("encoder tensor missing: " + name);
  return it->second;
}

void EncoderModel::reset_counters() const {
  counters_->layers = 0;
  counters_->encodes = 0;
}

MatrixF EncoderModel::conv_features(std::span<const float> samples) const {
  const auto frames = conv_output_length(config_.conv_stack, static_cast<std::int64_t>(samples.size()));
  (void)frames;

  MatrixF x(samples.size(), 1, std::vector<float>(samples.begin(), samples.end()));
  for (std::size_t i = 0; i < conv_.size(); ++i) {
    const auto& spec = config_.conv_stack[i];
    const std::size_t in_ch = x.cols();
    const std::size_t out_len = (x.rows() - spec.kernel) / spec.stride + 1;
    const std::size_t window = spec.kernel * in_ch;
    const auto& bias = param("encoder.conv." + std::to_string(i) + ".bias").values;
    MatrixF y(out_len, static_cast<std::size_t>(spec.channels));
    for (std::size_t t = 0; t < out_len; ++t) {
      const float* src = x.data() + t * spec.stride * in_ch;
      float* dst = y.data() + t * y.cols();
      for (std::size_t o = 0; o < y.cols(); ++o) {
        dst[o] = bias[o] + kernels::dot(conv_[i].weight.data() + o * window, src, window);
      }
    }
    y = kernels::layer_norm(y, conv_[i].norm_weight, conv_[i].norm_bias, config_.layer_norm_eps);
    for (float& v : y.values()) v = kernels::gelu(v);
    x = std::move(y);
  }

  const MatrixF normed = kernels::layer_norm(x, param("encoder.proj.norm.weight").values,
                                             param("encoder.proj.norm.bias").values, config_.layer_norm_eps);
  return kernels::linear(normed, param("encoder.proj.weight").values, param("encoder.proj.bias").values);
}

MatrixF EncoderModel::add_positional(const MatrixF& x) const {
  const std::size_t K = static_cast<std::size_t>(config_.pos_conv_kernel);
  if (K == 0) return x;
  const std::size_t T = x.rows();
  const std::size_t d = x.cols();
  const std::size_t groups = static_cast<std::size_t>(config_.pos_conv_groups);
  const std::size_t cpg = d / groups;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);
  const auto& w = param("encoder.pos_conv.weight").values;  // [d][cpg][K]
  const auto& b = param("encoder.pos_conv.bias").values;

  // Same-length output: padding K/2 on both sides, trailing frame dropped for even K.
  MatrixF out = x;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t o = 0; o < d; ++o) {
      const std::size_t g = o / cpg;
      float acc = b[o];
      for (std::size_t k = 0; k < K; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
        const float* xs = x.data() + static_cast<std::size_t>(src) * d + g * cpg;
        const float* wo = w.data() + o * cpg * K + k;
        for (std::size_t c = 0; c < cpg; ++c) acc += wo[c * K] * xs[c];
      }
      out(t, o) += kernels::gelu(acc);
    }
  }
  return out;
}

LayerFeatureStack EncoderModel::encode(const AudioSegment& segment, int max_layers) const {
  if (max_layers < 1 || max_layers > config_.num_layers) {
    throw Error("max_layers " + std::to_string(max_layers) + " outside [1, " + std::to_string(config_.num_layers) +
                "]");
  }
  counters_->encodes.fetch_add(1);
  LayerFeatureStack stack;
  stack.utt_id = segment.utt_id;
  MatrixF h = add_positional(conv_features(segment.samples));
  stack.layers.reserve(static_cast<std::size_t>(max_layers));
  for (int l = 0; l < max_layers; ++l) {
    h = transformer_layer(h, layers_[static_cast<std::size_t>(l)], config_);
    counters_->layers.fetch_add(1);
    stack.layers.push_back(h);
  }
  return stack;
}

}  // namespace layerprobe
