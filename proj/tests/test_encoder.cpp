#include <cmath>

#include "doctest.h"
#include "layerprobe/encoder.hpp"
#include "layerprobe/model_io.hpp"
#include "support.hpp"

using namespace layerprobe;

namespace {

struct OwnedLayer {
  std::vector<float> an_w, an_b, qw, qb, kw, kb, vw, vb, ow, ob, fn_w, fn_b, f1w, f1b, f2w, f2b;

  OwnedLayer(std::size_t d, std::size_t f)
      : an_w(d, 1.f), an_b(d, 0.f), qw(d * d), qb(d), kw(d * d), kb(d), vw(d * d), vb(d), ow(d * d), ob(d),
        fn_w(d, 1.f), fn_b(d, 0.f), f1w(f * d), f1b(f), f2w(d * f), f2b(d) {}

  void randomize(std::uint64_t seed) {
    Rng rng(seed);
    for (auto* v : {&qw, &qb, &kw, &kb, &vw, &vb, &ow, &ob, &f1w, &f1b, &f2w, &f2b, &an_b, &fn_b}) {
      for (auto& x : *v) x = static_cast<float>(rng.uniform(-0.5, 0.5));
    }
  }

  TransformerLayerParams view() const {
    return {an_w, an_b, qw, qb, kw, kb, vw, vb, ow, ob, fn_w, fn_b, f1w, f1b, f2w, f2b};
  }
};

EncoderConfig layer_config(int d, int heads, int f) {
  EncoderConfig c;
  c.num_layers = 1;
  c.hidden_dim = d;
  c.num_heads = heads;
  c.ffn_dim = f;
  return c;
}

AudioSegment noise_segment(std::size_t n, std::uint64_t seed) {
  AudioSegment s;
  s.samples = testing::random_signal(n, seed);
  s.utt_id = "u" + std::to_string(seed);
  return s;
}

}  // namespace

TEST_CASE("frame count of the default conv stack on 64600 samples is 201") {
  // floor((n - k) / s) + 1 per layer, by hand:
  // 64600 -> (64600-10)/5+1 = 12919 -> (12919-3)/2+1 = 6459 -> 3229 -> 1614 -> 806 -> (806-2)/2+1 = 403 -> 201
  std::int64_t n = 64600;
  const int k[] = {10, 3, 3, 3, 3, 2, 2};
  const int s[] = {5, 2, 2, 2, 2, 2, 2};
  for (int i = 0; i < 7; ++i) n = (n - k[i]) / s[i] + 1;
  CHECK(n == 201);
  const auto stack = EncoderConfig::default_conv_stack();
  CHECK(conv_output_length(stack, 64600) == 201);
  for (const auto& c : stack) CHECK(c.channels == 512);
}

TEST_CASE("receptive field is 25 ms with a 20 ms hop") {
  const auto stack = EncoderConfig::default_conv_stack();
  CHECK(receptive_field(stack) == 400);
  std::int64_t hop = 1;
  for (const auto& c : stack) hop *= c.stride;
  CHECK(hop == 320);
}

TEST_CASE("toy stack and short inputs") {
  const std::vector<ConvLayerSpec> toy = {{4, 2, 2}};
  CHECK(conv_output_length(toy, 8) == 4);
  const std::vector<ConvLayerSpec> k10 = {{4, 10, 5}};
  CHECK_THROWS_WITH_AS(conv_output_length(k10, 3), doctest::Contains("input too short"), Error);
}

TEST_CASE("full-size configurations") {
  const auto base = EncoderConfig::base();
  CHECK(base.num_layers == 12);
  CHECK(base.hidden_dim == 768);
  const auto large = EncoderConfig::large();
  CHECK(large.num_layers == 24);
  CHECK(large.hidden_dim == 1024);
  CHECK(large.hidden_dim % large.num_heads == 0);
  CHECK_NOTHROW(base.validate());
  CHECK_NOTHROW(large.validate());
  CHECK(parameter_inventory(base).size() == 7 * 4 + 4 + 2 + 12 * 16);
  CHECK(parameter_inventory(large).size() == 7 * 4 + 4 + 2 + 24 * 16);
}

TEST_CASE("config validation") {
  auto c = layer_config(6, 4, 8);
  CHECK_THROWS_AS(c.validate(), Error);
  c = layer_config(8, 2, 8);
  c.conv_stack.clear();
  CHECK_THROWS_AS(c.validate(), Error);
  c = layer_config(8, 2, 8);
  c.conv_stack = {{4, 2, 0}};
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("metadata round trip and wiring check") {
  const auto c = testing::toy_encoder_config(3);
  const auto meta = encoder_metadata(c, "toy");
  CHECK(encoder_config_from(meta) == c);
  CHECK(parse_conv_stack(encode_conv_stack(c.conv_stack)) == c.conv_stack);
  auto other = meta;
  other["wiring"] = "postnorm-relu/v0";
  CHECK_THROWS_WITH_AS(encoder_config_from(other), doctest::Contains("wiring"), Error);
  other.erase("wiring");
  CHECK_THROWS_AS(encoder_config_from(other), Error);
}

TEST_CASE("zero attention and FFN weights leave the input unchanged") {
  const std::size_t d = 4, f = 8, T = 5;
  OwnedLayer p(d, f);
  MatrixF x(T, d);
  Rng rng(1);
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-2, 2));
  const auto y = transformer_layer(x, p.view(), layer_config(d, 2, f));
  CHECK(y == x);
}

TEST_CASE("single token: attention over one key is the identity") {
  // x = (1, 3): LN gives (-a, a) with a = 1/sqrt(1 + eps). V = I, out = diag(2, 1), out bias (0.5, 0).
  OwnedLayer p(2, 2);
  p.vw = {1, 0, 0, 1};
  p.qw = {0.3f, -0.7f, 1.1f, 0.2f};
  p.kw = {-0.4f, 0.9f, 0.5f, 0.6f};
  p.ow = {2, 0, 0, 1};
  p.ob = {0.5f, 0};
  MatrixF x(1, 2, std::vector<float>{1.f, 3.f});
  const auto y = transformer_layer(x, p.view(), layer_config(2, 1, 2));
  const double a = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y(0, 0) == doctest::Approx(1.0 - 2.0 * a + 0.5).epsilon(1e-6));
  CHECK(y(0, 1) == doctest::Approx(3.0 + a).epsilon(1e-6));
}

TEST_CASE("hand-computed FFN path with GELU") {
  // attention off; LN(x) = (-a, a); fc1 = I, fc2 = I so out = x + gelu(LN x)
  OwnedLayer p(2, 2);
  p.f1w = {1, 0, 0, 1};
  p.f2w = {1, 0, 0, 1};
  MatrixF x(1, 2, std::vector<float>{1.f, 3.f});
  const auto y = transformer_layer(x, p.view(), layer_config(2, 1, 2));
  const double a = 1.0 / std::sqrt(1.0 + 1e-5);
  auto gelu = [](double z) { return 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0))); };
  CHECK(y(0, 0) == doctest::Approx(1.0 + gelu(-a)).epsilon(1e-6));
  CHECK(y(0, 1) == doctest::Approx(3.0 + gelu(a)).epsilon(1e-6));
}

TEST_CASE("a layer without positional input is permutation-equivariant") {
  const std::size_t d = 8, f = 16, T = 7;
  OwnedLayer p(d, f);
  p.randomize(9);
  MatrixF x(T, d);
  Rng rng(2);
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-1, 1));
  const std::vector<std::size_t> perm = {3, 0, 6, 1, 5, 2, 4};
  MatrixF xp(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < d; ++j) xp(t, j) = x(perm[t], j);
  }
  const auto cfg = layer_config(d, 2, f);
  const auto y = transformer_layer(x, p.view(), cfg);
  const auto yp = transformer_layer(xp, p.view(), cfg);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < d; ++j) CHECK(yp(t, j) == doctest::Approx(y(perm[t], j)).epsilon(1e-5));
  }
}

TEST_CASE("NaN weights are a hard error") {
  OwnedLayer p(2, 2);
  p.vw = {NAN, 0, 0, 1};
  MatrixF x(2, 2, std::vector<float>{1, 2, 3, 4});
  CHECK_THROWS_WITH_AS(transformer_layer(x, p.view(), layer_config(2, 1, 2)), doctest::Contains("NaN"), Error);
}

TEST_CASE("encode: full depth, prefix consistency, invocation counts") {
  const auto cfg = testing::toy_encoder_config(6);
  EncoderModel model(cfg, make_random_encoder_tensors(cfg, 21));
  const auto seg = noise_segment(64600, 4);

  model.reset_counters();
  const auto full = model.encode(seg, 6);
  CHECK(model.layer_invocations() == 6);
  REQUIRE(full.depth() == 6);
  CHECK(full.frame_count() == 201);
  CHECK(full.hidden_dim() == 16);
  CHECK(full.utt_id == seg.utt_id);

  for (int x = 1; x <= 6; ++x) {
    model.reset_counters();
    const auto part = model.encode(seg, x);
    CHECK(model.layer_invocations() == static_cast<std::uint64_t>(x));
    REQUIRE(part.depth() == static_cast<std::size_t>(x));
    for (int l = 0; l < x; ++l) CHECK(part.layers[l] == full.layers[l]);
  }
  CHECK(model.encode(seg, 6).layers == full.layers);
  CHECK_THROWS_AS(model.encode(seg, 0), Error);
  CHECK_THROWS_AS(model.encode(seg, 7), Error);
}

TEST_CASE("conv_features shape and determinism") {
  const auto cfg = testing::toy_encoder_config(1);
  EncoderModel model(cfg, make_random_encoder_tensors(cfg, 5));
  const auto seg = noise_segment(64600, 8);
  const auto a = model.conv_features(seg.samples);
  CHECK(a.rows() == 201);
  CHECK(a.cols() == 16);
  CHECK(a == model.conv_features(seg.samples));
  CHECK_THROWS_AS(model.conv_features(std::vector<float>(100, 0.f)), Error);
}

TEST_CASE("model loading validates the tensor inventory") {
  const auto cfg = testing::toy_encoder_config(2);
  const auto good = make_random_encoder_tensors(cfg, 1);
  CHECK_NOTHROW(EncoderModel(cfg, good));

  auto missing = good;
  missing.erase("encoder.layer.2.ffn.fc1.weight");
  CHECK_THROWS_WITH_AS(EncoderModel(cfg, missing), doctest::Contains("missing"), Error);

  auto wrong = good;
  wrong["encoder.layer.1.attn.q.weight"].shape = {8, 32};
  CHECK_THROWS_WITH_AS(EncoderModel(cfg, wrong), doctest::Contains("shape mismatch"), Error);

  auto extra = good;
  extra["encoder.layer.3.attn.q.bias"] = Tensor::vector(std::vector<float>(16, 0.f));
  CHECK_THROWS_WITH_AS(EncoderModel(cfg, extra), doctest::Contains("unexpected"), Error);
}

TEST_CASE("container load and golden conformance") {
  testing::TempDir dir;
  const auto cfg = testing::toy_encoder_config(3);
  auto tensors = make_random_encoder_tensors(cfg, 77);
  const auto seg = noise_segment(64600, 12);
  {
    EncoderModel reference(cfg, tensors);
    const auto stack = reference.encode(seg, 3);
    tensors["golden.input"] = Tensor::vector(seg.samples);
    for (int l = 0; l < 3; ++l) tensors["golden.layer." + std::to_string(l + 1)] = Tensor::from_matrix(stack.layers[l]);
  }
  write_container(tensors, encoder_metadata(cfg, "toy"), dir / "m.lpc");

  const auto model = EncoderModel::load(dir / "m.lpc");
  CHECK(model.config() == cfg);
  const auto golden = load_golden_vectors(dir / "m.lpc");
  AudioSegment in;
  in.samples = golden.input;
  const auto got = model.encode(in, 3);
  for (int l = 0; l < 3; ++l) {
    float worst = 0.f;
    for (std::size_t i = 0; i < got.layers[l].size(); ++i) {
      worst = std::max(worst, std::abs(got.layers[l].values()[i] - golden.expected.layers[l].values()[i]));
    }
    CHECK(worst <= 1e-4f);
  }
  CHECK(model.checksum() == tensor_checksum(model.tensors(), "encoder."));
}

TEST_CASE("random tensors are seed-determined and bounded by fan-in") {
  const auto cfg = testing::toy_encoder_config(2);
  const auto a = make_random_encoder_tensors(cfg, 3);
  CHECK(a == make_random_encoder_tensors(cfg, 3));
  CHECK(a != make_random_encoder_tensors(cfg, 4));
  const auto& q = a.at("encoder.layer.1.attn.q.weight");
  const float bound = 1.0f / std::sqrt(16.0f);
  for (float v : q.values) CHECK(std::abs(v) <= bound);
  for (float v : a.at("encoder.layer.1.attn_norm.weight").values) CHECK(v == 1.0f);
}
