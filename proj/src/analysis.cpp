#include "layerprobe/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "layerprobe/aggregation.hpp"
#include "layerprobe/model_io.hpp"

namespace layerprobe {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<int> parse_int_list(const std::string& text, const char* key, std::vector<std::string>& errors) {
  std::vector<int> out;
  std::istringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    item = trim(item);
    char* end = nullptr;
    const long v = std::strtol(item.c_str(), &end, 10);
    if (item.empty() || *end != '\0') {
      errors.push_back(std::string("'") + key + "' entry is not an integer: " + item);
    } else {
      out.push_back(static_cast<int>(v));
    }
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

const std::set<std::string> kTrainKeys = {"lr",         "batch_size", "max_epochs", "patience",      "dropout_p",
                                          "seeds",      "adam_beta1", "adam_beta2", "adam_eps",      "layers",
                                          "target_len", "train_crop", "eval_crop",  "cache_features"};

const std::set<std::string> kExperimentKeys = {"dataset", "model",    "train_protocol", "dev_protocol",  "eval_protocol",
                                               "audio_root", "backend", "out",          "cache_dir",     "sweep_layers",
                                               "bench_repetitions"};

struct CellContext {
  const ExperimentConfig& config;
  const EncoderModel& model;
  const LoadedSplits& splits;
};

int config_layers(const ExperimentConfig& config, const EncoderModel& model) {
  return config.train.layers_for(model.num_layers());
}

std::vector<SeedArtifacts> train_cell(const CellContext& ctx, std::ostream& log) {
  const auto& config = ctx.config;
  config.train.validate(ctx.model.num_layers());
  const int layers = config_layers(config, ctx.model);
  const auto factory = backend_factory(config.backend, config.train.dropout_p);
  FeatureStore features(ctx.model, layers, config.train.target_len, config.train.cache_features,
                        resolve_cache_dir(config));

  std::vector<SeedArtifacts> artifacts;
  std::vector<std::string> failures;
  for (auto seed : config.train.seeds) {
    SeedArtifacts a;
    a.seed = seed;
    a.dir = seed_dir(config.out_dir, config.dataset, config.backend, layers, seed);
    std::filesystem::create_directories(a.dir);

    std::ostringstream train_log;
    a.run = train_seed(config.train, seed, ctx.model, ctx.splits.train, ctx.splits.dev, factory, features, &train_log);
    if (a.run.failure) {
      write_text(a.dir / "train.log", train_log.str());
      log << "seed " << seed << ": " << *a.run.failure << '\n';
      failures.push_back("seed " + std::to_string(seed) + ": " + *a.run.failure);
      continue;
    }

    const auto params = a.run.parameters();
    Metadata meta{{"kind", "layerprobe-trained"},
                  {"dataset", config.dataset},
                  {"backend", config.backend},
                  {"layers", std::to_string(layers)},
                  {"seed", std::to_string(seed)},
                  {"hidden_dim", std::to_string(ctx.model.hidden_dim())},
                  {"best_epoch", std::to_string(a.run.best_epoch)},
                  {"encoder_checksum", checksum_hex(ctx.model.checksum())}};
    write_container(params, meta, a.dir / "params.lpc");

    auto trained = restore_trained(params, factory, static_cast<std::size_t>(ctx.model.hidden_dim()));
    const auto dev_scores = score_split(*trained.backend, trained.weights, features, ctx.splits.dev, config.train.eval_crop);
    write_scores(dev_scores, a.dir / "dev_scores.txt");
    const auto dev_eer = compute_eer(read_scores(a.dir / "dev_scores.txt"));
    train_log << "best_epoch " << a.run.best_epoch << " dev_eer " << fmt("%.6f", dev_eer.eer) << '\n';
    write_text(a.dir / "train.log", train_log.str());

    log << "seed " << seed << ": " << a.run.epoch_losses.size() << " epochs, best " << a.run.best_epoch
        << ", dev EER " << fmt("%.4f", dev_eer.eer * 100.0) << "%\n";
    artifacts.push_back(std::move(a));
  }
  if (!failures.empty()) {
    std::string msg = "training failed:";
    for (const auto& f : failures) msg += "\n  " + f;
    throw Error(msg);
  }
  return artifacts;
}

std::vector<EvalOutcome> eval_cell(const CellContext& ctx, std::ostream& log) {
  const auto& config = ctx.config;
  const int layers = config_layers(config, ctx.model);
  const auto factory = backend_factory(config.backend, config.train.dropout_p);
  FeatureStore features(ctx.model, layers, config.train.target_len, config.train.cache_features,
                        resolve_cache_dir(config));

  std::vector<EvalOutcome> outcomes;
  std::vector<EerReportRow> report;
  for (auto seed : config.train.seeds) {
    const auto dir = seed_dir(config.out_dir, config.dataset, config.backend, layers, seed);
    const auto params_path = dir / "params.lpc";
    if (!std::filesystem::exists(params_path)) throw Error("missing artifact " + params_path.string());
    const auto container = read_container(params_path);
    const auto trained_layers = container.meta_int("layers");
    if (trained_layers != layers) {
      throw Error(params_path.string() + " was trained with " + std::to_string(trained_layers) +
                  " layers but the config requests " + std::to_string(layers));
    }
    if (container.meta("encoder_checksum") != checksum_hex(ctx.model.checksum())) {
      throw Error(params_path.string() + " was trained against a different encoder");
    }
    if (container.meta("backend") != config.backend) {
      throw Error(params_path.string() + " holds a '" + container.meta("backend") + "' back-end, config requests '" +
                  config.backend + "'");
    }

    auto trained = restore_trained(container.tensors, factory, static_cast<std::size_t>(ctx.model.hidden_dim()));
    require(trained.weights.size() == static_cast<std::size_t>(layers), "agg.raw length does not match layer count");
    EvalOutcome o;
    o.seed = seed;
    o.score_file = dir / "eval_scores.txt";
    write_scores(score_split(*trained.backend, trained.weights, features, ctx.splits.eval, config.train.eval_crop),
                 o.score_file);
    o.eer = compute_eer(read_scores(o.score_file));
    log << "seed " << seed << ": eval EER " << fmt("%.4f", o.eer.eer * 100.0) << "%\n";
    report.push_back({config.dataset, seed, layers, config.backend, o.eer.eer});
    outcomes.push_back(std::move(o));
  }
  write_eer_report(report, cell_dir(config.out_dir, config.dataset, config.backend, layers) / "eer_report.csv");
  std::vector<EERResult> results;
  for (const auto& o : outcomes) results.push_back(o.eer);
  log << "mean eval EER " << fmt("%.4f", mean_eer(results) * 100.0) << "%\n";
  return outcomes;
}

DatasetSplit load_split(const std::filesystem::path& protocol, const std::optional<std::filesystem::path>& audio_root,
                        SplitName name) {
  DatasetSplit split;
  split.name = name;
  split.entries = parse_protocol(protocol, audio_root ? *audio_root : protocol.parent_path());
  if (split.entries.empty()) throw Error("protocol " + protocol.string() + " lists no utterances");
  return split;
}

void check_layer_values(const std::vector<int>& values, int num_layers) {
  require(!values.empty(), "no layer values given");
  for (int x : values) {
    if (x < 1 || x > num_layers) {
      throw Error("layer value " + std::to_string(x) + " out of range [1, " + std::to_string(num_layers) + "]");
    }
  }
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir) {
  std::map<std::string, std::string> kv;
  std::vector<std::string> errors;
  std::istringstream in(text);
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back("line " + std::to_string(line_no) + ": expected 'key = value'");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!kTrainKeys.count(key) && !kExperimentKeys.count(key)) {
      errors.push_back("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    } else if (!kv.emplace(key, value).second) {
      errors.push_back("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }

  ExperimentConfig c;
  c.train = train_config_from(kv, errors);
  auto path_of = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_absolute() ? p : base_dir / p;
  };
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  for (auto [key, field] : {std::pair{"model", &c.model}, std::pair{"train_protocol", &c.train_protocol},
                            std::pair{"dev_protocol", &c.dev_protocol}, std::pair{"eval_protocol", &c.eval_protocol}}) {
    if (const auto* v = get(key)) {
      *field = path_of(*v);
    } else {
      errors.push_back(std::string("missing required key '") + key + "'");
    }
  }
  if (const auto* v = get("dataset")) c.dataset = *v;
  if (c.dataset.empty() || c.dataset.find('/') != std::string::npos) errors.push_back("dataset must be a plain name");
  if (const auto* v = get("backend")) c.backend = *v;
  if (const auto* v = get("audio_root")) c.audio_root = path_of(*v);
  if (const auto* v = get("out")) c.out_dir = *v;
  c.out_dir = path_of(c.out_dir.string());
  if (const auto* v = get("cache_dir")) c.cache_dir = path_of(*v);
  if (const auto* v = get("sweep_layers")) c.sweep_layers = parse_int_list(*v, "sweep_layers", errors);
  if (const auto* v = get("bench_repetitions")) {
    const auto reps = parse_int_list(*v, "bench_repetitions", errors);
    if (reps.size() == 1 && reps[0] >= 1) {
      c.bench_repetitions = reps[0];
    } else {
      errors.push_back("bench_repetitions must be one positive integer");
    }
  }
  try {
    (void)backend_factory(c.backend, 0.0f);
  } catch (const Error& e) {
    errors.push_back(e.what());
  }
  for (auto& e : c.train.validation_errors()) errors.push_back(std::move(e));

  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw Error(msg);
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_experiment_config(ss.str(), path.parent_path());
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::optional<std::filesystem::path> resolve_cache_dir(const ExperimentConfig& config) {
  std::optional<std::filesystem::path> root = config.cache_dir;
  if (const char* env = std::getenv("LAYERPROBE_CACHE_DIR"); env && *env) root = std::filesystem::path(env);
  if (!root) return std::nullopt;
  return *root / config.dataset;
}

std::filesystem::path cell_dir(const std::filesystem::path& out_dir, const std::string& dataset,
                               const std::string& backend, int layers) {
  return out_dir / dataset / backend / (std::to_string(layers) + "layers");
}

std::filesystem::path seed_dir(const std::filesystem::path& out_dir, const std::string& dataset,
                               const std::string& backend, int layers, std::uint64_t seed) {
  return cell_dir(out_dir, dataset, backend, layers) / ("seed" + std::to_string(seed));
}

LoadedSplits load_splits(const ExperimentConfig& config) {
  return {load_split(config.train_protocol, config.audio_root, SplitName::train),
          load_split(config.dev_protocol, config.audio_root, SplitName::dev),
          load_split(config.eval_protocol, config.audio_root, SplitName::eval)};
}

std::vector<SeedArtifacts> cmd_train(const ExperimentConfig& config, std::ostream& log) {
  const auto model = EncoderModel::load(config.model);
  const auto splits = load_splits(config);
  return train_cell({config, model, splits}, log);
}

std::vector<EvalOutcome> cmd_eval(const ExperimentConfig& config, std::ostream& log) {
  const auto model = EncoderModel::load(config.model);
  config.train.validate(model.num_layers());
  LoadedSplits splits;
  splits.eval = load_split(config.eval_protocol, config.audio_root, SplitName::eval);
  return eval_cell({config, model, splits}, log);
}

HeatmapTable build_heatmap(const std::vector<HeatmapInput>& inputs, bool row_max) {
  require(!inputs.empty(), "heatmap needs at least one run");
  std::size_t width = 0;
  HeatmapTable table;
  for (const auto& in : inputs) {
    if (in.raw_per_seed.empty()) throw Error("no trained seeds for dataset '" + in.dataset + "'");
    HeatmapRow row{in.dataset, {}};
    for (const auto& raw : in.raw_per_seed) {
      if (width == 0) width = raw.size();
      if (raw.size() != width || width == 0) throw Error("inconsistent X across runs");
      std::vector<double> raw_d(raw.begin(), raw.end());
      const auto p = softmax_normalize<double>(raw_d);
      row.weights.resize(width, 0.0);
      for (std::size_t l = 0; l < width; ++l) row.weights[l] += p[l];
    }
    for (auto& w : row.weights) w /= static_cast<double>(in.raw_per_seed.size());
    table.rows.push_back(std::move(row));
  }
  table.average_row.assign(width, 0.0);
  for (const auto& row : table.rows) {
    for (std::size_t l = 0; l < width; ++l) table.average_row[l] += row.weights[l];
  }
  for (auto& w : table.average_row) w /= static_cast<double>(table.rows.size());

  if (row_max) {
    auto scale = [](std::vector<double>& v) {
      const double m = *std::max_element(v.begin(), v.end());
      for (auto& x : v) x /= m;
    };
    for (auto& row : table.rows) scale(row.weights);
    scale(table.average_row);
  }
  return table;
}

std::vector<HeatmapInput> collect_heatmap_inputs(const std::vector<std::filesystem::path>& cell_dirs) {
  std::vector<HeatmapInput> inputs;
  for (const auto& cell : cell_dirs) {
    std::vector<std::filesystem::path> files;
    if (std::filesystem::is_directory(cell)) {
      for (const auto& e : std::filesystem::directory_iterator(cell)) {
        const auto p = e.path() / "params.lpc";
        if (e.is_directory() && e.path().filename().string().starts_with("seed") && std::filesystem::exists(p)) {
          files.push_back(p);
        }
      }
    }
    if (files.empty()) throw Error("no seed*/params.lpc under " + cell.string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto container = read_container(f);
      if (!container.contains("agg.raw")) throw Error("missing agg.raw in " + f.string());
      const std::string dataset = container.metadata.count("dataset") ? container.meta("dataset")
                                                                       : cell.parent_path().parent_path().filename().string();
      auto it = std::find_if(inputs.begin(), inputs.end(), [&](const auto& in) { return in.dataset == dataset; });
      if (it == inputs.end()) {
        inputs.push_back({dataset, {}});
        it = std::prev(inputs.end());
      }
      it->raw_per_seed.push_back(container.tensor("agg.raw").values);
    }
  }
  return inputs;
}

void write_heatmap_csv(const HeatmapTable& table, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "dataset";
  for (std::size_t l = 1; l <= table.average_row.size(); ++l) out << ",layer_" << l;
  out << '\n';
  auto emit = [&](const std::string& name, const std::vector<double>& w) {
    out << name;
    for (double v : w) out << ',' << fmt("%.9f", v);
    out << '\n';
  };
  for (const auto& row : table.rows) emit(row.dataset, row.weights);
  emit("AVERAGE", table.average_row);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text(path, out.str());
}

std::vector<std::filesystem::path> discover_cells(const std::filesystem::path& out_dir, const std::string& backend,
                                                  std::optional<int> layers) {
  std::vector<std::filesystem::path> cells;
  if (!std::filesystem::is_directory(out_dir)) throw Error("output directory " + out_dir.string() + " does not exist");
  for (const auto& ds : std::filesystem::directory_iterator(out_dir)) {
    const auto backend_dir = ds.path() / backend;
    if (!ds.is_directory() || !std::filesystem::is_directory(backend_dir)) continue;
    for (const auto& cell : std::filesystem::directory_iterator(backend_dir)) {
      const std::string name = cell.path().filename().string();
      if (!cell.is_directory() || !name.ends_with("layers")) continue;
      const int x = std::atoi(name.c_str());
      if (x < 1 || (layers && x != *layers)) continue;
      bool has_seed = false;
      for (const auto& s : std::filesystem::directory_iterator(cell.path())) {
        has_seed = has_seed || std::filesystem::exists(s.path() / "params.lpc");
      }
      if (has_seed) cells.push_back(cell.path());
    }
  }
  std::sort(cells.begin(), cells.end());
  if (cells.empty()) throw Error("no trained runs for back-end '" + backend + "' under " + out_dir.string());
  return cells;
}

HeatmapTable cmd_heatmap(const std::vector<std::filesystem::path>& cell_dirs, const std::filesystem::path& out_csv,
                         bool row_max) {
  const auto table = build_heatmap(collect_heatmap_inputs(cell_dirs), row_max);
  write_heatmap_csv(table, out_csv);
  return table;
}

std::vector<TimingRow> measure_eval_timing(const ExperimentConfig& config, const EncoderModel& model,
                                           const DatasetSplit& split, const std::vector<int>& layer_values,
                                           int repetitions) {
  check_layer_values(layer_values, model.num_layers());
  require(repetitions >= 1, "repetitions must be at least 1");
  require(!split.entries.empty(), "timing needs at least one utterance");
  const auto factory = backend_factory(config.backend, config.train.dropout_p);

  std::vector<AudioSegment> audio;
  for (const auto& e : split.entries) {
    audio.push_back(decode_wav(e.audio_path));
    audio.back().utt_id = e.utt_id;
  }
  struct Probe {
    int layers;
    std::unique_ptr<Backend> backend;
    LayerWeightVector weights;
    std::vector<std::vector<double>> per_utt;  // [utterance][repetition] seconds
    std::uint64_t invocations = 0;
  };
  std::vector<Probe> probes;
  for (int x : layer_values) {
    Rng init(config.train.seeds.empty() ? 0 : config.train.seeds.front());
    probes.push_back({x, factory(static_cast<std::size_t>(model.hidden_dim()), init), LayerWeightVector::ones(x),
                      std::vector<std::vector<double>>(audio.size()), 0});
  }

  double sink = 0.0;
  auto time_one = [&](Probe& p, const AudioSegment& seg) {
    Rng unused(0);
    model.reset_counters();
    const auto start = std::chrono::steady_clock::now();
    const auto window = crop_or_pad(seg, config.train.target_len, config.train.eval_crop);
    const auto stack = model.encode(window, p.layers);
    const MatrixF agg = aggregate(stack, p.weights).matrix;
    sink += p.backend->forward(std::span<const MatrixF>(&agg, 1), Mode::eval, unused)[0].score;
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    if (model.layer_invocations() != static_cast<std::uint64_t>(p.layers)) {
      throw Error("X=" + std::to_string(p.layers) + ": " + std::to_string(model.layer_invocations()) +
                  " layer invocations for one utterance");
    }
    p.invocations += model.layer_invocations();
    return elapsed.count();
  };

  // Every X runs back to back on each utterance so background load hits all of them alike.
  for (std::size_t u = 0; u < audio.size(); ++u) {
    for (auto& p : probes) time_one(p, audio[u]);  // warm-up
  }
  for (int r = 0; r < repetitions; ++r) {
    for (auto& p : probes) p.invocations = 0;
    for (std::size_t u = 0; u < audio.size(); ++u) {
      for (auto& p : probes) p.per_utt[u].push_back(time_one(p, audio[u]));
    }
  }
  require(std::isfinite(sink), "non-finite score during timing");

  std::vector<TimingRow> rows;
  for (auto& p : probes) {
    const auto expected = static_cast<std::uint64_t>(p.layers) * audio.size();
    if (p.invocations != expected) {
      throw Error("X=" + std::to_string(p.layers) + ": " + std::to_string(p.invocations) +
                  " layer invocations, expected " + std::to_string(expected));
    }
    double total = 0.0;
    for (auto& reps : p.per_utt) {
      std::sort(reps.begin(), reps.end());
      const std::size_t n = reps.size();
      total += n % 2 ? reps[n / 2] : 0.5 * (reps[n / 2 - 1] + reps[n / 2]);
    }
    rows.push_back({p.layers, total / static_cast<double>(audio.size()), p.invocations, audio.size()});
  }
  return rows;
}

SweepReport cmd_sweep(const ExperimentConfig& config, const std::vector<int>& layer_values,
                      const std::vector<std::string>& backends, std::ostream& log) {
  const auto model = EncoderModel::load(config.model);
  check_layer_values(layer_values, model.num_layers());
  require(!backends.empty(), "no back-ends given");
  const auto splits = load_splits(config);

  SweepReport report;
  for (const auto& backend : backends) {
    for (int x : layer_values) {
      ExperimentConfig cell = config;
      cell.backend = backend;
      cell.train.truncate_layers = x;
      log << "== " << backend << ", " << x << " layers ==\n";
      train_cell({cell, model, splits}, log);
      const auto outcomes = eval_cell({cell, model, splits}, log);
      SweepCell c{backend, x, config.dataset, 0.0, {}};
      std::vector<EERResult> results;
      for (const auto& o : outcomes) {
        c.per_seed_eer.push_back(o.eer.eer);
        results.push_back(o.eer);
      }
      c.mean_eer = mean_eer(results);
      report.cells.push_back(std::move(c));
    }
  }
  ExperimentConfig timing_cfg = config;
  timing_cfg.backend = backends.front();
  report.timing = measure_eval_timing(timing_cfg, model, splits.eval, layer_values, config.bench_repetitions);

  const auto dir = config.out_dir / config.dataset;
  write_sweep_csv(report, dir / "sweep.csv");
  write_timing_csv(report.timing, dir / "timing.csv");
  return report;
}

void write_sweep_csv(const SweepReport& report, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "backend,layers,dataset,mean_eer,per_seed_eer\n";
  for (const auto& c : report.cells) {
    out << c.backend << ',' << c.layers << ',' << c.dataset << ',' << fmt("%.6f", c.mean_eer) << ',';
    for (std::size_t i = 0; i < c.per_seed_eer.size(); ++i) out << (i ? ";" : "") << fmt("%.6f", c.per_seed_eer[i]);
    out << '\n';
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text(path, out.str());
}

void write_timing_csv(const std::vector<TimingRow>& timing, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "layers,mean_wall_time_per_utt,encoder_layer_invocations,utterances\n";
  for (const auto& t : timing) {
    out << t.layers << ',' << fmt("%.9f", t.mean_wall_time_per_utt) << ',' << t.encoder_layer_invocations << ','
        << t.utterances << '\n';
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text(path, out.str());
}

std::vector<TimingRow> cmd_bench(const ExperimentConfig& config, const std::vector<int>& layer_values,
                                 std::ostream& log) {
  const auto model = EncoderModel::load(config.model);
  const auto eval = load_split(config.eval_protocol, config.audio_root, SplitName::eval);
  const auto rows = measure_eval_timing(config, model, eval, layer_values, config.bench_repetitions);
  for (const auto& r : rows) {
    log << r.layers << " layers: " << fmt("%.3f", r.mean_wall_time_per_utt * 1e3) << " ms/utt, "
        << r.encoder_layer_invocations << " layer invocations over " << r.utterances << " utterances\n";
  }
  write_timing_csv(rows, config.out_dir / config.dataset / "bench_timing.csv");
  return rows;
}

}  // namespace layerprobe
