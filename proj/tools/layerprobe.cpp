#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "layerprobe/analysis.hpp"
#include "layerprobe/model_io.hpp"
#include "layerprobe/synthetic.hpp"

using namespace layerprobe;

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> int_list(const std::string& text, const char* what) {
  std::vector<int> out;
  for (const auto& s : split_list(text)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw Error(std::string("bad ") + what + " value '" + s + "'");
    }
  }
  return out;
}

struct Overrides {
  std::string config;
  std::string layers;
  std::string backend;
  std::string seeds;
  std::string out;
  bool row_max = false;
};

ExperimentConfig load_with(const Overrides& o, bool single_layer, bool single_backend) {
  ExperimentConfig c = load_experiment_config(o.config);
  if (!o.layers.empty() && single_layer) {
    const auto xs = int_list(o.layers, "--layers");
    if (xs.size() != 1) throw Error("--layers takes one value for this command");
    c.train.truncate_layers = xs[0];
  }
  if (!o.backend.empty() && single_backend) {
    const auto bs = split_list(o.backend);
    if (bs.size() != 1) throw Error("--backend takes one value for this command");
    c.backend = bs[0];
  }
  if (!o.seeds.empty()) {
    c.train.seeds.clear();
    for (const auto& s : split_list(o.seeds)) {
      try {
        c.train.seeds.push_back(std::stoull(s));
      } catch (const std::exception&) {
        throw Error("bad --seeds value '" + s + "'");
      }
    }
  }
  if (!o.out.empty()) c.out_dir = o.out;
  c.train.validate();
  return c;
}

void add_common(CLI::App* cmd, Overrides& o, bool row_max = false) {
  cmd->add_option("--config", o.config, "Experiment config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--layers", o.layers, "Layer count(s), comma separated");
  cmd->add_option("--backend", o.backend, "Back-end name(s), comma separated");
  cmd->add_option("--seeds", o.seeds, "Seeds, comma separated");
  cmd->add_option("--out", o.out, "Output directory");
  if (row_max) cmd->add_flag("--row-max", o.row_max, "Divide each heatmap row by its maximum");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layerprobe: layer-wise probing of frozen speech encoders for spoof detection"};
  app.require_subcommand(1);

  Overrides o;
  auto* train = app.add_subcommand("train", "Train every seed and write per-seed artifacts");
  add_common(train, o);
  auto* eval = app.add_subcommand("eval", "Score the eval protocol with trained artifacts");
  add_common(eval, o);
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate over layer counts and back-ends");
  add_common(sweep, o);
  auto* heatmap = app.add_subcommand("heatmap", "Export averaged normalized layer weights as CSV");
  add_common(heatmap, o, true);
  auto* bench = app.add_subcommand("bench", "Time the truncated eval path per layer count");
  add_common(bench, o);

  std::string synth_out;
  int synth_train = 100, synth_dev = 20, synth_eval = 40;
  std::uint64_t synth_seed = 7;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic tone/noise corpus (train, dev, eval)");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--train", synth_train, "Utterances per class in train");
  synth->add_option("--dev", synth_dev, "Utterances per class in dev");
  synth->add_option("--eval", synth_eval, "Utterances per class in eval");
  synth->add_option("--seed", synth_seed, "Corpus seed");

  std::string toy_out;
  EncoderConfig toy;
  toy.num_layers = 4;
  toy.hidden_dim = 16;
  toy.num_heads = 2;
  toy.ffn_dim = 64;
  toy.pos_conv_kernel = 16;
  toy.pos_conv_groups = 4;
  int toy_channels = 64;
  std::uint64_t toy_seed = 1;
  auto* toy_model = app.add_subcommand("toy-model", "Write a randomly initialized small encoder container");
  toy_model->add_option("--out", toy_out, "Container path")->required();
  toy_model->add_option("--layers", toy.num_layers, "Transformer layers");
  toy_model->add_option("--hidden", toy.hidden_dim, "Hidden dimension");
  toy_model->add_option("--heads", toy.num_heads, "Attention heads");
  toy_model->add_option("--ffn", toy.ffn_dim, "Feed-forward dimension");
  toy_model->add_option("--channels", toy_channels, "Conv channels");
  toy_model->add_option("--pos-kernel", toy.pos_conv_kernel, "Positional conv kernel (0 disables)");
  toy_model->add_option("--pos-groups", toy.pos_conv_groups, "Positional conv groups");
  toy_model->add_option("--seed", toy_seed, "Weight seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      cmd_train(load_with(o, true, true), std::cout);
    } else if (eval->parsed()) {
      cmd_eval(load_with(o, true, true), std::cout);
    } else if (sweep->parsed()) {
      const auto c = load_with(o, false, false);
      const auto layers = o.layers.empty() ? c.sweep_layers : int_list(o.layers, "--layers");
      if (layers.empty()) throw Error("sweep needs --layers or sweep_layers in the config");
      const auto backends = o.backend.empty() ? std::vector<std::string>{c.backend} : split_list(o.backend);
      const auto report = cmd_sweep(c, layers, backends, std::cout);
      for (const auto& cell : report.cells) {
        std::printf("%s %d layers: mean EER %.4f%%\n", cell.backend.c_str(), cell.layers, cell.mean_eer * 100.0);
      }
      for (const auto& t : report.timing) {
        std::printf("%d layers: %.3f ms/utt\n", t.layers, t.mean_wall_time_per_utt * 1e3);
      }
    } else if (heatmap->parsed()) {
      const auto c = load_with(o, false, true);
      std::optional<int> x;
      if (!o.layers.empty()) {
        const auto xs = int_list(o.layers, "--layers");
        if (xs.size() != 1) throw Error("--layers takes one value for heatmap");
        x = xs[0];
      }
      std::string name = "heatmap_" + c.backend + (x ? "_" + std::to_string(*x) + "layers" : std::string()) +
                         (o.row_max ? "_rowmax" : "") + ".csv";
      const auto out = c.out_dir / name;
      const auto table = cmd_heatmap(discover_cells(c.out_dir, c.backend, x), out, o.row_max);
      std::printf("wrote %s (%zu dataset rows, %zu layers)\n", out.string().c_str(), table.rows.size(),
                  table.average_row.size());
    } else if (bench->parsed()) {
      const auto c = load_with(o, false, true);
      auto layers = o.layers.empty() ? c.sweep_layers : int_list(o.layers, "--layers");
      if (layers.empty()) layers = {EncoderModel::load(c.model).num_layers()};
      cmd_bench(c, layers, std::cout);
    } else if (synth->parsed()) {
      const std::filesystem::path root(synth_out);
      const std::pair<const char*, int> splits[] = {{"train", synth_train}, {"dev", synth_dev}, {"eval", synth_eval}};
      for (std::size_t i = 0; i < 3; ++i) {
        SynthSpec spec;
        spec.n_per_class = splits[i].second;
        spec.seed = mix_seed(synth_seed, i);
        const auto corpus = generate_corpus(spec, root / splits[i].first);
        std::printf("%s: %zu utterances, %s\n", splits[i].first, corpus.entries.size(),
                    corpus.protocol.string().c_str());
      }
    } else if (toy_model->parsed()) {
      toy.conv_stack = EncoderConfig::default_conv_stack(toy_channels);
      toy.validate();
      write_container(make_random_encoder_tensors(toy, toy_seed), encoder_metadata(toy, "toy"), toy_out);
      std::printf("wrote %s (%d layers, d=%d)\n", toy_out.c_str(), toy.num_layers, toy.hidden_dim);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
