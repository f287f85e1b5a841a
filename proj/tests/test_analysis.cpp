#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "layerprobe/analysis.hpp"
#include "layerprobe/model_io.hpp"
#include "layerprobe/synthetic.hpp"
#include "support.hpp"

using namespace layerprobe;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

/// A two-layer toy encoder, small synthetic splits and a config pointing at them.
struct Workspace {
  testing::TempDir dir;
  std::filesystem::path config_path;

  explicit Workspace(int layers = 2, const std::string& extra = "") {
    const auto cfg = testing::toy_encoder_config(layers);
    write_container(make_random_encoder_tensors(cfg, 21), encoder_metadata(cfg, "toy"), dir / "model.lpc");
    SynthSpec spec;
    spec.duration_samples = 16000;
    spec.n_per_class = 4;
    for (const char* split : {"train", "dev", "eval"}) {
      spec.seed += 1;
      generate_corpus(spec, dir / split);
    }
    config_path = dir / "exp.cfg";
    std::ofstream(config_path) << "# toy experiment\n"
                                  "model = model.lpc\n"
                                  "train_protocol = train/protocol.txt\n"
                                  "dev_protocol = dev/protocol.txt\n"
                                  "eval_protocol = eval/protocol.txt\n"
                                  "out = runs\n"
                                  "lr = 0.001\n"
                                  "batch_size = 4\n"
                                  "max_epochs = 3\n"
                                  "patience = 3\n"
                                  "seeds = 3,4\n"
                                  "target_len = 8000\n"
                                  "bench_repetitions = 1\n"
                               << extra;
  }

  ExperimentConfig config() const { return load_experiment_config(config_path); }
};

}  // namespace

TEST_CASE("config parsing resolves paths and reports all errors together") {
  const auto c = parse_experiment_config("model = m.lpc\ntrain_protocol = /abs/t.txt\ndev_protocol = d\neval_protocol = e\n"
                                         "layers = 3\nsweep_layers = 1, 2,3\n",
                                         "/base");
  CHECK(c.model == "/base/m.lpc");
  CHECK(c.train_protocol == "/abs/t.txt");
  CHECK(c.out_dir == "/base/runs");
  CHECK(c.train.truncate_layers == 3);
  CHECK(c.sweep_layers == std::vector<int>{1, 2, 3});
  CHECK(c.backend == "ffn");

  try {
    parse_experiment_config("model = m\nmodel = n\ncolour = red\nbackend = aasist\nlr = -1\nno equals sign\n", "/");
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    for (const char* part : {"duplicate key 'model'", "unknown key 'colour'", "unknown back-end", "lr",
                             "missing required key 'train_protocol'", "line 6"}) {
      CHECK_MESSAGE(msg.find(part) != std::string::npos, part);
    }
  }
}

TEST_CASE("the cache directory environment variable overrides the config") {
  ExperimentConfig c;
  c.dataset = "toyset";
  ::unsetenv("LAYERPROBE_CACHE_DIR");
  CHECK_FALSE(resolve_cache_dir(c).has_value());
  c.cache_dir = "/cfg";
  CHECK(*resolve_cache_dir(c) == "/cfg/toyset");
  ::setenv("LAYERPROBE_CACHE_DIR", "/env", 1);
  CHECK(*resolve_cache_dir(c) == "/env/toyset");
  ::unsetenv("LAYERPROBE_CACHE_DIR");
}

TEST_CASE("heatmap of untrained weights is uniform") {
  const std::vector<HeatmapInput> in = {{"a", {std::vector<float>(4, 1.f), std::vector<float>(4, 1.f)}},
                                        {"b", {std::vector<float>(4, 1.f)}}};
  const auto t = build_heatmap(in);
  REQUIRE(t.rows.size() == 2);
  for (const auto& row : t.rows) {
    for (double w : row.weights) CHECK(w == doctest::Approx(0.25).epsilon(1e-12));
  }
  for (double w : t.average_row) CHECK(w == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("heatmap averages one-hot seeds and supports row-max scaling") {
  const float big = 80.f;  // softmax of (80, 0, 0) is one-hot to double precision
  const std::vector<HeatmapInput> in = {{"a", {{big, 0.f, 0.f}, {0.f, big, 0.f}}}};
  const auto t = build_heatmap(in);
  CHECK(t.rows[0].weights[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(t.rows[0].weights[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(t.rows[0].weights[2] == doctest::Approx(0.0).epsilon(1e-12));
  const auto m = build_heatmap(in, true);
  CHECK(m.rows[0].weights[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.average_row[1] == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_WITH_AS(build_heatmap({{"a", {{1.f, 2.f}, {1.f, 2.f, 3.f}}}}), doctest::Contains("inconsistent X"),
                       Error);
  CHECK_THROWS_WITH_AS(build_heatmap({{"a", {{1.f, 2.f}}}, {"b", {{1.f}}}}), doctest::Contains("inconsistent X"),
                       Error);
}

TEST_CASE("heatmap CSV rows sum to one") {
  testing::TempDir dir;
  Rng rng(3);
  std::vector<HeatmapInput> in(2);
  in[0].dataset = "x";
  in[1].dataset = "y";
  for (auto& i : in) {
    for (int s = 0; s < 3; ++s) {
      std::vector<float> raw(7);
      for (auto& r : raw) r = static_cast<float>(rng.uniform(-3, 3));
      i.raw_per_seed.push_back(raw);
    }
  }
  write_heatmap_csv(build_heatmap(in), dir / "h.csv");
  std::ifstream f(dir / "h.csv");
  std::string line;
  std::getline(f, line);
  CHECK(line == "dataset,layer_1,layer_2,layer_3,layer_4,layer_5,layer_6,layer_7");
  int rows = 0;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    double sum = 0;
    while (std::getline(ss, cell, ',')) sum += std::stod(cell);
    CHECK(std::abs(sum - 1.0) <= 1e-6);
    ++rows;
  }
  CHECK(rows == 3);
}

TEST_CASE("train, eval and heatmap through the command layer") {
  Workspace ws;
  auto cfg = ws.config();
  std::ostringstream log;
  const auto trained = cmd_train(cfg, log);
  REQUIRE(trained.size() == 2);
  const auto cell = cell_dir(cfg.out_dir, "synthetic", "ffn", 2);
  for (const char* f : {"params.lpc", "train.log", "dev_scores.txt"}) {
    CHECK(std::filesystem::exists(cell / "seed3" / f));
  }
  CHECK(slurp(cell / "seed3" / "train.log").find("best_epoch ") != std::string::npos);

  const auto evals = cmd_eval(cfg, log);
  REQUIRE(evals.size() == 2);
  CHECK(std::filesystem::exists(cell / "seed4" / "eval_scores.txt"));
  CHECK(evals[0].eer.eer == compute_eer(read_scores(cell / "seed3" / "eval_scores.txt")).eer);
  CHECK(slurp(cell / "eer_report.csv").rfind("dataset,seed,layers,backend,eer\nsynthetic,3,2,ffn,", 0) == 0);

  const auto cells = discover_cells(cfg.out_dir, "ffn", std::nullopt);
  REQUIRE(cells.size() == 1);
  const auto table = cmd_heatmap(cells, ws.dir / "heat.csv", false);
  REQUIRE(table.rows.size() == 1);
  CHECK(table.rows[0].weights.size() == 2);
  double sum = 0;
  for (double w : table.rows[0].weights) sum += w;
  CHECK(std::abs(sum - 1.0) < 1e-9);

  // retraining the same seeds reproduces every artifact byte for byte
  const auto before = slurp(cell / "seed3" / "params.lpc");
  const auto scores_before = slurp(cell / "seed3" / "eval_scores.txt");
  cmd_train(cfg, log);
  cmd_eval(cfg, log);
  CHECK(slurp(cell / "seed3" / "params.lpc") == before);
  CHECK(slurp(cell / "seed3" / "eval_scores.txt") == scores_before);

  // evaluating with a different X than was trained is refused
  std::filesystem::create_directories(cell_dir(cfg.out_dir, "synthetic", "ffn", 1) / "seed3");
  std::filesystem::copy_file(cell / "seed3" / "params.lpc", cell_dir(cfg.out_dir, "synthetic", "ffn", 1) / "seed3" / "params.lpc");
  auto one = cfg;
  one.train.truncate_layers = 1;
  CHECK_THROWS_WITH_AS(cmd_eval(one, log), doctest::Contains("trained with 2 layers but the config requests 1"), Error);

  // and a missing seed directory names the file
  auto other = cfg;
  other.train.seeds = {99};
  CHECK_THROWS_WITH_AS(cmd_eval(other, log), doctest::Contains("missing artifact"), Error);
  CHECK_THROWS_WITH_AS(collect_heatmap_inputs({ws.dir / "nowhere"}), doctest::Contains("no seed*/params.lpc"), Error);
}

TEST_CASE("eval refuses parameters trained against another encoder") {
  Workspace ws(1);
  auto cfg = ws.config();
  cfg.train.seeds = {3};
  std::ostringstream log;
  cmd_train(cfg, log);
  const auto c2 = testing::toy_encoder_config(1);
  write_container(make_random_encoder_tensors(c2, 22), encoder_metadata(c2, "toy"), cfg.model);
  CHECK_THROWS_WITH_AS(cmd_eval(cfg, log), doctest::Contains("different encoder"), Error);
}

TEST_CASE("sweep trains every X, counts layer invocations and matches a plain train at X = L") {
  Workspace ws;
  auto cfg = ws.config();
  std::ostringstream log;
  const auto report = cmd_sweep(cfg, {1, 2}, {"ffn"}, log);
  REQUIRE(report.cells.size() == 2);
  REQUIRE(report.timing.size() == 2);
  CHECK(report.timing[0].encoder_layer_invocations == 8);  // 8 eval utterances x 1 layer
  CHECK(report.timing[1].encoder_layer_invocations == 16);
  CHECK(report.timing[0].utterances == 8);
  CHECK(std::filesystem::exists(cfg.out_dir / "synthetic" / "sweep.csv"));
  CHECK(std::filesystem::exists(cfg.out_dir / "synthetic" / "timing.csv"));
  CHECK(slurp(cfg.out_dir / "synthetic" / "sweep.csv").rfind("backend,layers,dataset,mean_eer,per_seed_eer\nffn,1,synthetic,", 0) == 0);
  const auto full_cell = report.cells[1];

  // the X = L sweep cell is the ordinary untruncated pipeline
  testing::TempDir other;
  auto plain = cfg;
  plain.out_dir = other.path();
  cmd_train(plain, log);
  const auto evals = cmd_eval(plain, log);
  REQUIRE(evals.size() == full_cell.per_seed_eer.size());
  for (std::size_t i = 0; i < evals.size(); ++i) CHECK(evals[i].eer.eer == full_cell.per_seed_eer[i]);

  CHECK_THROWS_WITH_AS(cmd_sweep(cfg, {0, 2}, {"ffn"}, log), doctest::Contains("out of range [1, 2]"), Error);
  CHECK_THROWS_WITH_AS(cmd_sweep(cfg, {3}, {"ffn"}, log), doctest::Contains("out of range"), Error);
}

TEST_CASE("bench writes a timing table") {
  Workspace ws(2);
  auto cfg = ws.config();
  std::ostringstream log;
  const auto rows = cmd_bench(cfg, {1, 2}, log);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].mean_wall_time_per_utt > 0);
  CHECK(slurp(cfg.out_dir / "synthetic" / "bench_timing.csv")
            .rfind("layers,mean_wall_time_per_utt,encoder_layer_invocations,utterances\n1,", 0) == 0);
}
