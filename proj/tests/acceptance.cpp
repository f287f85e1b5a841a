// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "layerprobe/analysis.hpp"
#include "layerprobe/model_io.hpp"
#include "layerprobe/synthetic.hpp"
#include "support.hpp"

using namespace layerprobe;

namespace {

// Pinned tolerances and budgets.
constexpr double kSoftmaxTol = 1e-6;
constexpr double kGradRelTol = 1e-4;
constexpr double kHeatmapRowTol = 1e-6;
constexpr double kMaxMeanEer = 0.05;
constexpr double kTruncationEerGap = 0.02;
constexpr double kAggregationBudget = 5.0;
constexpr double kGradientBudget = 30.0;
constexpr double kEerBudget = 5.0;
constexpr double kPrefixBudget = 10.0;
constexpr double kEndToEndBudget = 300.0;

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void report(const char* name, const Outcome& o, double secs) {
  std::printf("[%s] %-28s %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

void run(const char* name, double budget, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  const double secs = seconds_since(start);
  if (budget > 0 && secs >= budget) {
    o.pass = false;
    o.detail += "; over budget " + fmt("%.0f s", budget);
  }
  report(name, o, secs);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Every encoder checksum observed across training runs, for the frozen-encoder line.
struct ChecksumLedger {
  std::size_t runs = 0;
  std::size_t mismatches = 0;
  void add(const TrainRun& r, std::uint64_t expected) {
    ++runs;
    if (r.encoder_checksum_before != expected || r.encoder_checksum_after != expected) ++mismatches;
  }
} checksums;

Outcome aggregation_invariants() {
  Rng rng(101);
  double worst_sum = 0, worst_shift = 0;
  bool one_hot_exact = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t X = 1 + rng.uniform_index(24);
    const double mag = std::pow(10.0, rng.uniform(-2, 3));
    std::vector<float> raw(X);
    for (auto& r : raw) r = static_cast<float>(rng.uniform(-mag, mag));
    const auto p = softmax_normalize<float>(raw);
    double sum = 0;
    for (float v : p) sum += v;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));

    // shifted in double: a float sum of two 1e3-sized values already moves the input by ~1e-4
    const double shift = rng.uniform(-mag, mag);
    std::vector<double> base(raw.begin(), raw.end()), shifted(raw.begin(), raw.end());
    for (auto& r : shifted) r += shift;
    const auto pd = softmax_normalize<double>(base);
    const auto q = softmax_normalize<double>(shifted);
    for (std::size_t l = 0; l < X; ++l) worst_shift = std::max(worst_shift, std::abs(pd[l] - q[l]));

    std::vector<MatrixF> layers;
    for (std::size_t l = 0; l < X; ++l) {
      MatrixF m(3, 4);
      for (auto& v : m.values()) v = static_cast<float>(rng.uniform(-mag, mag));
      layers.push_back(std::move(m));
    }
    std::vector<float> e(X, 0.f);
    const auto k = rng.uniform_index(X);
    e[k] = 1.f;
    const auto out = aggregate_normalized<float>(layers, e);
    one_hot_exact = one_hot_exact && std::memcmp(out.data(), layers[k].data(), out.size() * sizeof(float)) == 0;
  }
  const bool pass = worst_sum <= kSoftmaxTol && worst_shift <= kSoftmaxTol && one_hot_exact;
  return {pass, "1000 vectors: max |sum-1| " + fmt("%.2e", worst_sum) + ", max shift delta " + fmt("%.2e", worst_shift) +
                    ", one-hot " + (one_hot_exact ? "bitwise" : "NOT bitwise")};
}

Outcome gradient_oracle() {
  Rng pick(202);
  double worst = 0;
  std::string where;
  std::size_t scalars = 0;
  const int configs = 24;
  for (int c = 0; c < configs; ++c) {
    const std::size_t d = 1 + pick.uniform_index(8);
    const std::size_t T = 1 + pick.uniform_index(6);
    const std::size_t X = 1 + pick.uniform_index(4);
    const std::size_t hidden = 2 + pick.uniform_index(7);
    const double dropout = pick.bernoulli(0.5) ? 0.2 : 0.0;
    const auto p = testing::random_chain_problem(pick.next_u64(), d, T, X, hidden, dropout);
    const auto r = testing::chain_gradcheck(p);
    scalars += r.checked;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      where = r.worst + " in config " + std::to_string(c);
    }
  }
  return {worst < kGradRelTol, std::to_string(configs) + " configs, " + std::to_string(scalars) +
                                   " scalars: max rel error " + fmt("%.2e", worst) + (where.empty() ? "" : " at " + where)};
}

Outcome eer_oracle() {
  bool fixed = compute_eer(std::vector<float>{0.9f, 0.8f}, std::vector<float>{0.1f, 0.2f}).eer == 0.0 &&
               compute_eer(std::vector<float>{0.1f, 0.2f}, std::vector<float>{0.9f, 0.8f}).eer == 1.0 &&
               compute_eer(std::vector<float>{0.2f, 0.8f}, std::vector<float>{0.3f, 0.7f}).eer == 0.5;
  Rng rng(303);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = 2 + rng.uniform_index(199);
    const auto nb = 1 + rng.uniform_index(n - 1);
    const bool coarse = rng.bernoulli(0.5);
    std::vector<float> b, s;
    for (std::size_t i = 0; i < n; ++i) {
      float v = static_cast<float>(rng.uniform(-1, 1) + (i < nb ? 0.6 : 0.0));
      if (coarse) v = std::round(v * 5) / 5;
      (i < nb ? b : s).push_back(v);
    }
    const auto got = compute_eer(b, s);
    const auto want = testing::brute_force_eer(b, s);
    if (got.eer != want.eer || got.far_at_threshold != want.far || got.frr_at_threshold != want.frr) ++mismatches;
  }
  return {fixed && mismatches == 0, std::string("fixed examples ") + (fixed ? "ok" : "WRONG") + ", " +
                                        std::to_string(200 - mismatches) + "/200 random sets exact"};
}

Outcome prefix_consistency() {
  const auto cfg = testing::toy_encoder_config(8);
  EncoderModel model(cfg, make_random_encoder_tensors(cfg, 404));
  int bitwise = 0;
  bool counts = true;
  for (int i = 0; i < 20; ++i) {
    AudioSegment seg;
    seg.samples = testing::random_signal(4000 + 997 * static_cast<std::size_t>(i), 500 + i);
    model.reset_counters();
    const auto full = model.encode(seg, 8);
    counts = counts && model.layer_invocations() == 8;
    model.reset_counters();
    const auto three = model.encode(seg, 3);
    counts = counts && model.layer_invocations() == 3;
    bool same = three.depth() == 3;
    for (int l = 0; same && l < 3; ++l) {
      same = three.layers[l].rows() == full.layers[l].rows() &&
             std::memcmp(three.layers[l].data(), full.layers[l].data(), three.layers[l].size() * sizeof(float)) == 0;
    }
    bitwise += same;
  }
  return {bitwise == 20 && counts, std::to_string(bitwise) + "/20 inputs bitwise equal, invocation counts " +
                                       (counts ? "exactly X" : "WRONG")};
}

/// Experiment encoders: d = 16 with 64 conv channels. Narrower random front-ends lose much of the
/// tone/noise distinction to the per-frame normalization after each conv layer.
EncoderConfig toy_config(int layers) { return testing::toy_encoder_config(layers, 16, 64); }

/// The desk-scale synthetic setup shared by the experiment lines.
struct Experiment {
  testing::TempDir dir{"lp_accept"};
  std::filesystem::path model4, model8;

  Experiment() {
    write_container(make_random_encoder_tensors(toy_config(4), 4004),
                    encoder_metadata(toy_config(4), "toy"), dir / "toy4.lpc");
    write_container(make_random_encoder_tensors(toy_config(8), 8008),
                    encoder_metadata(toy_config(8), "toy"), dir / "toy8.lpc");
    model4 = dir / "toy4.lpc";
    model8 = dir / "toy8.lpc";
    const std::pair<const char*, int> splits[] = {{"train", 100}, {"dev", 20}, {"eval", 40}};
    for (std::size_t i = 0; i < 3; ++i) {
      SynthSpec spec;
      spec.n_per_class = splits[i].second;
      spec.seed = mix_seed(2024, i);
      generate_corpus(spec, dir / splits[i].first);
    }
  }

  ExperimentConfig config(const std::filesystem::path& model, const std::string& out) const {
    ExperimentConfig c;
    c.model = model;
    c.train_protocol = dir / "train" / "protocol.txt";
    c.dev_protocol = dir / "dev" / "protocol.txt";
    c.eval_protocol = dir / "eval" / "protocol.txt";
    c.out_dir = dir / out;
    c.train.max_epochs = 20;
    c.train.cache_features = true;
    c.cache_dir = dir / "cache";
    c.train.validate();
    return c;
  }
};

double mean_of(const std::vector<EvalOutcome>& outcomes) {
  std::vector<EERResult> r;
  for (const auto& o : outcomes) r.push_back(o.eer);
  return mean_eer(r);
}

std::string per_seed(const std::vector<EvalOutcome>& outcomes) {
  std::string s;
  for (const auto& o : outcomes) s += (s.empty() ? "" : "/") + fmt("%.2f%%", o.eer.eer * 100);
  return s;
}

std::vector<EvalOutcome> train_and_eval(const ExperimentConfig& cfg, std::uint64_t checksum) {
  std::ostringstream log;
  for (const auto& a : cmd_train(cfg, log)) checksums.add(a.run, checksum);
  return cmd_eval(cfg, log);
}

Outcome end_to_end(const Experiment& ex) {
  const auto cfg = ex.config(ex.model4, "e2e");
  const auto checksum = EncoderModel::load(cfg.model).checksum();
  const auto outcomes = train_and_eval(cfg, checksum);
  const double mean = mean_of(outcomes);

  const auto table = cmd_heatmap(discover_cells(cfg.out_dir, "ffn", 4), cfg.out_dir / "heatmap.csv", false);
  double worst_row = 0;
  auto check_row = [&](const std::vector<double>& w) {
    double s = 0;
    for (double v : w) s += v;
    worst_row = std::max(worst_row, std::abs(s - 1.0));
  };
  for (const auto& r : table.rows) check_row(r.weights);
  check_row(table.average_row);
  // the CSV as written, at its printed precision
  std::ifstream csv(cfg.out_dir / "heatmap.csv");
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    std::istringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::vector<double> w;
    while (std::getline(ss, cell, ',')) w.push_back(std::stod(cell));
    check_row(w);
  }

  auto rerun = ex.config(ex.model4, "e2e_rerun");
  rerun.train.seeds = {cfg.train.seeds[1]};
  train_and_eval(rerun, checksum);
  const auto rel = std::filesystem::path("synthetic") / "ffn" / "4layers" / ("seed" + std::to_string(cfg.train.seeds[1]));
  const bool identical = slurp(cfg.out_dir / rel / "eval_scores.txt") == slurp(rerun.out_dir / rel / "eval_scores.txt") &&
                         !slurp(cfg.out_dir / rel / "eval_scores.txt").empty();

  const bool pass = mean <= kMaxMeanEer && worst_row <= kHeatmapRowTol && identical;
  return {pass, "mean eval EER " + fmt("%.2f%%", mean * 100) + " (" + per_seed(outcomes) + ", limit " +
                    fmt("%.0f%%", kMaxMeanEer * 100) + "), heatmap max |row-1| " + fmt("%.1e", worst_row) +
                    ", seed rerun " + (identical ? "byte-identical" : "DIFFERS")};
}

Outcome truncation(const Experiment& ex) {
  auto cfg = ex.config(ex.model8, "trunc");
  const auto model = EncoderModel::load(cfg.model);
  const auto eval = load_splits(cfg).eval;
  const auto timing = measure_eval_timing(cfg, model, eval, {2, 4, 8}, 5);
  const bool monotone = timing[0].mean_wall_time_per_utt < timing[1].mean_wall_time_per_utt &&
                        timing[1].mean_wall_time_per_utt < timing[2].mean_wall_time_per_utt;

  // X = 8 first so its cached stacks serve X = 4 by prefix
  cfg.train.truncate_layers = 8;
  const double eer8 = mean_of(train_and_eval(cfg, model.checksum()));
  cfg.train.truncate_layers = 4;
  const double eer4 = mean_of(train_and_eval(cfg, model.checksum()));
  const bool close = std::abs(eer4 - eer8) <= kTruncationEerGap;

  std::string t;
  for (const auto& row : timing) t += (t.empty() ? "" : " < ") + fmt("%.2f", row.mean_wall_time_per_utt * 1e3);
  return {monotone && close, "ms/utt X=2,4,8: " + t + (monotone ? "" : " (NOT monotone)") + "; mean EER X=4 " +
                                 fmt("%.2f%%", eer4 * 100) + " vs X=8 " + fmt("%.2f%%", eer8 * 100)};
}

Outcome frozen_encoder(const Experiment& ex) {
  const bool files_intact = EncoderModel::load(ex.model4).checksum() ==
                                tensor_checksum(make_random_encoder_tensors(toy_config(4), 4004), "encoder.") &&
                            EncoderModel::load(ex.model8).checksum() ==
                                tensor_checksum(make_random_encoder_tensors(toy_config(8), 8008), "encoder.");
  const bool pass = checksums.runs > 0 && checksums.mismatches == 0 && files_intact;
  return {pass, std::to_string(checksums.runs) + " training runs, " + std::to_string(checksums.mismatches) +
                    " checksum changes, model files " + (files_intact ? "unchanged" : "CHANGED")};
}

}  // namespace

int main() {
  std::printf("layerprobe acceptance\n");
  run("aggregation invariants", kAggregationBudget, aggregation_invariants);
  run("gradient oracle", kGradientBudget, gradient_oracle);
  run("EER oracle equivalence", kEerBudget, eer_oracle);
  run("prefix/truncation", kPrefixBudget, prefix_consistency);

  std::unique_ptr<Experiment> ex;
  const auto setup_start = std::chrono::steady_clock::now();
  try {
    ex = std::make_unique<Experiment>();
  } catch (const std::exception& e) {
    report("synthetic setup", {false, e.what()}, seconds_since(setup_start));
    return 1;
  }
  const double setup = seconds_since(setup_start);
  run("end-to-end synthetic", kEndToEndBudget - setup, [&] { return end_to_end(*ex); });
  run("truncation efficiency", 0, [&] { return truncation(*ex); });
  run("frozen encoder", 0, [&] { return frozen_encoder(*ex); });

  std::printf("%s: %d failing\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
