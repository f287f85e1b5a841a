#include "layerprobe/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "layerprobe/model_io.hpp"

namespace layerprobe {

namespace {

constexpr std::uint64_t kBatchOrderStream = 0x6261746368ULL;  // "batch"

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
  std::istringstream in(text);
  in >> out;
  return in && (in >> std::ws).eof();
}

}  // namespace

void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state, std::int64_t step,
               const AdamConfig& c) {
  require(params.size() == grads.size(), "Adam: parameter/gradient size mismatch");
  require(step >= 1, "Adam: step index starts at 1");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0f);
    state.v.assign(params.size(), 0.0f);
  }
  require(state.m.size() == params.size(), "Adam: moment size mismatch");
  for (float g : grads) {
    if (!std::isfinite(g)) throw NumericalError("Adam: non-finite gradient");
  }
  const double bias1 = 1.0 - std::pow(static_cast<double>(c.beta1), static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(static_cast<double>(c.beta2), static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grads[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0f - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0f - c.beta2) * g * g;
    const float m_hat = static_cast<float>(state.m[i] / bias1);
    const float v_hat = static_cast<float>(state.v[i] / bias2);
    params[i] -= c.lr * (m_hat / (std::sqrt(v_hat) + c.eps));
  }
}

std::vector<std::string> TrainConfig::validation_errors(int num_layers) const {
  std::vector<std::string> e;
  if (!(lr > 0.0f)) e.push_back("lr must be positive");
  if (batch_size < 1) e.push_back("batch_size must be at least 1");
  if (max_epochs < 1) e.push_back("max_epochs must be at least 1");
  if (patience < 1) e.push_back("patience must be at least 1");
  if (patience > max_epochs) e.push_back("patience must not exceed max_epochs");
  if (!(dropout_p >= 0.0f && dropout_p < 1.0f)) e.push_back("dropout_p must be in [0, 1)");
  if (seeds.empty()) e.push_back("at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) e.push_back("seeds must be unique");
  if (!(adam_beta1 >= 0.0f && adam_beta1 < 1.0f)) e.push_back("adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0f && adam_beta2 < 1.0f)) e.push_back("adam_beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0f)) e.push_back("adam_eps must be positive");
  if (truncate_layers < 0) e.push_back("layers must be at least 1");
  if (num_layers >= 0 && truncate_layers > num_layers) {
    e.push_back("layers " + std::to_string(truncate_layers) + " exceeds encoder depth " + std::to_string(num_layers));
  }
  if (target_len <= 0) e.push_back("target_len must be positive");
  if (eval_crop == CropMode::train_random) e.push_back("eval_crop must be deterministic (eval_start or full)");
  return e;
}

void TrainConfig::validate(int num_layers) const {
  const auto errors = validation_errors(num_layers);
  if (errors.empty()) return;
  std::string msg = "invalid training configuration:";
  for (const auto& e : errors) msg += "\n  - " + e;
  throw Error(msg);
}

TrainConfig train_config_from(const std::map<std::string, std::string>& kv, std::vector<std::string>& errors) {
  TrainConfig c;
  auto num = [&](const char* key, auto& field) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    if (!parse_number(it->second, field)) errors.push_back(std::string("'") + key + "' is not a number: " + it->second);
  };
  num("lr", c.lr);
  num("batch_size", c.batch_size);
  num("max_epochs", c.max_epochs);
  num("patience", c.patience);
  num("dropout_p", c.dropout_p);
  num("adam_beta1", c.adam_beta1);
  num("adam_beta2", c.adam_beta2);
  num("adam_eps", c.adam_eps);
  num("layers", c.truncate_layers);
  num("target_len", c.target_len);
  if (auto it = kv.find("seeds"); it != kv.end()) {
    c.seeds.clear();
    std::istringstream in(it->second);
    for (std::string item; std::getline(in, item, ',');) {
      std::uint64_t s = 0;
      if (parse_number(item, s)) {
        c.seeds.push_back(s);
      } else {
        errors.push_back("'seeds' entry is not an integer: " + item);
      }
    }
  }
  if (auto it = kv.find("cache_features"); it != kv.end()) {
    if (it->second == "true" || it->second == "1") {
      c.cache_features = true;
    } else if (it->second == "false" || it->second == "0") {
      c.cache_features = false;
    } else {
      errors.push_back("'cache_features' must be true or false");
    }
  }
  for (auto [key, field] : {std::pair{"train_crop", &c.train_crop}, std::pair{"eval_crop", &c.eval_crop}}) {
    if (auto it = kv.find(key); it != kv.end()) {
      try {
        *field = parse_crop_mode(it->second);
      } catch (const Error& e) {
        errors.push_back(e.what());
      }
    }
  }
  return c;
}

bool EarlyStopping::update(double loss) {
  ++epoch_;
  if (loss < best_) {
    best_ = loss;
    best_epoch_ = epoch_;
    return true;
  }
  return false;
}

TensorMap TrainRun::parameters() const {
  TensorMap params = backend_state;
  params.emplace("agg.raw", Tensor::vector(weights.raw));
  return params;
}

TrainedModel restore_trained(const TensorMap& params, const BackendFactory& factory, std::size_t input_dim) {
  auto it = params.find("agg.raw");
  if (it == params.end()) throw Error("trained parameters lack agg.raw");
  TrainedModel m;
  m.weights.raw = it->second.values;
  Rng unused(0);
  m.backend = factory(input_dim, unused);
  TensorMap backend_state;
  for (const auto& [name, t] : params) {
    if (name.starts_with("backend.")) backend_state.emplace(name, t);
  }
  m.backend->load_state(backend_state);
  return m;
}

double evaluate_loss(Backend& backend, const LayerWeightVector& weights, FeatureStore& features,
                     const DatasetSplit& split, CropMode crop) {
  require(!split.entries.empty(), "cannot evaluate an empty split");
  Rng unused(0);
  double total = 0.0;
  for (const auto& entry : split.entries) {
    const auto stack = features.get(entry, crop, unused);
    const MatrixF agg = aggregate(stack, weights).matrix;
    const auto scores = backend.forward(std::span<const MatrixF>(&agg, 1), Mode::eval, unused);
    total += cross_entropy<float>(scores[0].logits, entry.label).loss;
  }
  return total / static_cast<double>(split.entries.size());
}

ScoreSet score_split(Backend& backend, const LayerWeightVector& weights, FeatureStore& features,
                     const DatasetSplit& split, CropMode crop) {
  Rng unused(0);
  ScoreSet set;
  for (const auto& entry : split.entries) {
    const auto stack = features.get(entry, crop, unused);
    const MatrixF agg = aggregate(stack, weights).matrix;
    const auto scores = backend.forward(std::span<const MatrixF>(&agg, 1), Mode::eval, unused);
    set.entries.push_back({entry.utt_id, entry.label, scores[0].score});
  }
  return set;
}

TrainRun train_seed(const TrainConfig& config, std::uint64_t seed, const EncoderModel& model,
                    const DatasetSplit& train_split, const DatasetSplit& dev_split, const BackendFactory& factory,
                    FeatureStore& features, std::ostream* log) {
  config.validate(model.num_layers());
  require(!train_split.entries.empty(), "training split is empty");
  require(!dev_split.entries.empty(), "dev split is empty");
  const int layers = features.layers();
  require(layers == config.layers_for(model.num_layers()), "feature store layer count does not match config");

  TrainRun run;
  run.seed = seed;
  run.layers = layers;
  run.encoder_checksum_before = tensor_checksum(model.tensors(), "encoder.");

  Rng rng(seed);
  auto backend = factory(static_cast<std::size_t>(model.hidden_dim()), rng);
  LayerWeightVector weights = LayerWeightVector::ones(static_cast<std::size_t>(layers));
  const AdamConfig adam = config.adam();

  auto params = backend->parameters();
  std::vector<AdamState> adam_states(params.size());
  AdamState raw_state;
  std::int64_t step = 0;

  EarlyStopping stopper(config.patience);
  run.weights = weights;
  run.backend_state = backend->state();

  try {
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
      double train_total = 0.0;
      const auto batches =
          make_batch_indices(train_split.entries.size(), config.batch_size, mix_seed(seed ^ kBatchOrderStream, epoch));
      for (const auto& batch : batches) {
        std::vector<LayerFeatureStack> stacks;
        std::vector<MatrixF> aggs;
        stacks.reserve(batch.size());
        aggs.reserve(batch.size());
        for (auto idx : batch) {
          stacks.push_back(features.get(train_split.entries[idx], config.train_crop, rng));
          aggs.push_back(aggregate(stacks.back(), weights).matrix);
        }

        const auto scores = backend->forward(aggs, Mode::train, rng);
        std::vector<std::array<float, 2>> loss_grads(batch.size());
        const float inv_n = 1.0f / static_cast<float>(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) {
          const auto ce = cross_entropy<float>(scores[i].logits, train_split.entries[batch[i]].label);
          if (!std::isfinite(ce.loss)) throw NumericalError("non-finite training loss");
          train_total += ce.loss;
          loss_grads[i] = {ce.grad[0] * inv_n, ce.grad[1] * inv_n};
        }

        backend->zero_grad();
        const auto input_grads = backend->backward(loss_grads);
        std::vector<float> raw_grad(weights.raw.size(), 0.0f);
        for (std::size_t i = 0; i < batch.size(); ++i) {
          const auto g = grad_aggregate<float>(stacks[i].layers, weights.raw, input_grads[i]);
          for (std::size_t l = 0; l < g.size(); ++l) raw_grad[l] += g[l];
        }

        ++step;
        for (std::size_t k = 0; k < params.size(); ++k) {
          adam_step(params[k].value, params[k].grad, adam_states[k], step, adam);
        }
        adam_step(weights.raw, raw_grad, raw_state, step, adam);
      }

      const double train_loss = train_total / static_cast<double>(train_split.entries.size());
      const double eval_loss = evaluate_loss(*backend, weights, features, dev_split, config.eval_crop);
      if (!std::isfinite(eval_loss)) throw NumericalError("non-finite evaluation loss");
      run.epoch_losses.push_back({train_loss, eval_loss});
      if (log) *log << "epoch " << epoch << " train_loss " << fmt6(train_loss) << " eval_loss " << fmt6(eval_loss) << '\n';

      if (stopper.update(eval_loss)) {
        run.weights = weights;
        run.backend_state = backend->state();
      }
      if (stopper.should_stop() && epoch < config.max_epochs) {
        run.stopped_early = true;
        break;
      }
    }
  } catch (const NumericalError& e) {
    run.failure = std::string("diverged: ") + e.what();
    if (log) *log << "failure " << *run.failure << '\n';
  }
  run.best_epoch = stopper.best_epoch();

  run.encoder_checksum_after = tensor_checksum(model.tensors(), "encoder.");
  if (run.encoder_checksum_after != run.encoder_checksum_before) {
    throw Error("encoder tensors changed during training");
  }
  return run;
}

std::vector<TrainRun> train(const TrainConfig& config, const EncoderModel& model, const DatasetSplit& train_split,
                            const DatasetSplit& dev_split, const BackendFactory& factory,
                            std::optional<std::filesystem::path> cache_dir) {
  config.validate(model.num_layers());
  FeatureStore features(model, config.layers_for(model.num_layers()), config.target_len, config.cache_features,
                        std::move(cache_dir));
  std::vector<TrainRun> runs;
  for (auto seed : config.seeds) {
    runs.push_back(train_seed(config, seed, model, train_split, dev_split, factory, features));
  }
  return runs;
}

}  // namespace layerprobe
