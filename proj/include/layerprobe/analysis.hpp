#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "layerprobe/metrics.hpp"
#include "layerprobe/trainer.hpp"

namespace layerprobe {

/// Flat "key = value" experiment description. Relative paths resolve against the config file's
/// directory; '#' starts a comment.
struct ExperimentConfig {
  std::string dataset = "synthetic";
  std::filesystem::path model;
  std::filesystem::path train_protocol;
  std::filesystem::path dev_protocol;
  std::filesystem::path eval_protocol;
  std::optional<std::filesystem::path> audio_root;  // defaults to each protocol's directory
  std::string backend = "ffn";
  std::filesystem::path out_dir = "runs";
  std::optional<std::filesystem::path> cache_dir;
  std::vector<int> sweep_layers;
  int bench_repetitions = 5;
  TrainConfig train;
};

/// Parses and validates, reporting every problem in one exception.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir);

/// LAYERPROBE_CACHE_DIR when set, else the configured cache_dir; namespaced by dataset tag.
std::optional<std::filesystem::path> resolve_cache_dir(const ExperimentConfig& config);

std::filesystem::path cell_dir(const std::filesystem::path& out_dir, const std::string& dataset,
                               const std::string& backend, int layers);
std::filesystem::path seed_dir(const std::filesystem::path& out_dir, const std::string& dataset,
                               const std::string& backend, int layers, std::uint64_t seed);

struct LoadedSplits {
  DatasetSplit train, dev, eval;
};
LoadedSplits load_splits(const ExperimentConfig& config);

struct SeedArtifacts {
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  TrainRun run;
};

/// Trains every configured seed and writes params.lpc, train.log and dev_scores.txt per seed.
std::vector<SeedArtifacts> cmd_train(const ExperimentConfig& config, std::ostream& log);

struct EvalOutcome {
  std::uint64_t seed = 0;
  std::filesystem::path score_file;
  EERResult eer;
};

/// Scores the eval protocol with each seed's saved parameters, writes eval_scores.txt and
/// <cell>/eer_report.csv. EERs are computed from the score files as re-read from disk.
std::vector<EvalOutcome> cmd_eval(const ExperimentConfig& config, std::ostream& log);

struct HeatmapRow {
  std::string dataset;
  std::vector<double> weights;
};

struct HeatmapTable {
  std::vector<HeatmapRow> rows;
  std::vector<double> average_row;
};

/// Raw layer weights of each seed, grouped by dataset tag.
struct HeatmapInput {
  std::string dataset;
  std::vector<std::vector<float>> raw_per_seed;
};

/// Softmax-normalizes each seed, averages seeds per dataset, then averages the dataset rows.
/// row_max divides every row (including the average) by its largest entry.
HeatmapTable build_heatmap(const std::vector<HeatmapInput>& inputs, bool row_max = false);

/// Reads agg.raw from every seed*/params.lpc under each cell directory.
std::vector<HeatmapInput> collect_heatmap_inputs(const std::vector<std::filesystem::path>& cell_dirs);

/// Header "dataset,layer_1,...,layer_X"; last row is AVERAGE.
void write_heatmap_csv(const HeatmapTable& table, const std::filesystem::path& path);

/// Cells <out>/<any dataset>/<backend>/<X>layers holding at least one seed*/params.lpc.
std::vector<std::filesystem::path> discover_cells(const std::filesystem::path& out_dir, const std::string& backend,
                                                  std::optional<int> layers);

HeatmapTable cmd_heatmap(const std::vector<std::filesystem::path>& cell_dirs, const std::filesystem::path& out_csv,
                         bool row_max);

struct SweepCell {
  std::string backend;
  int layers = 0;
  std::string dataset;
  double mean_eer = 0.0;
  std::vector<double> per_seed_eer;
};

struct TimingRow {
  int layers = 0;
  double mean_wall_time_per_utt = 0.0;  // seconds; mean over utterances of the per-utterance median
  std::uint64_t encoder_layer_invocations = 0;
  std::size_t utterances = 0;
};

struct SweepReport {
  std::vector<SweepCell> cells;
  std::vector<TimingRow> timing;
};

/// Eval-path timing (crop, truncated encode, aggregate, score) over the eval split for each X.
/// Audio is decoded once up front; each utterance is timed `repetitions` times per X after one
/// warm-up pass. Throws if the layer-invocation count differs from X per utterance.
std::vector<TimingRow> measure_eval_timing(const ExperimentConfig& config, const EncoderModel& model,
                                           const DatasetSplit& split, const std::vector<int>& layer_values,
                                           int repetitions);

/// Fresh training per seed for every (backend, X), eval EER per seed, and the timing table.
SweepReport cmd_sweep(const ExperimentConfig& config, const std::vector<int>& layer_values,
                      const std::vector<std::string>& backends, std::ostream& log);

void write_sweep_csv(const SweepReport& report, const std::filesystem::path& path);
void write_timing_csv(const std::vector<TimingRow>& timing, const std::filesystem::path& path);

std::vector<TimingRow> cmd_bench(const ExperimentConfig& config, const std::vector<int>& layer_values,
                                 std::ostream& log);

}  // namespace layerprobe
