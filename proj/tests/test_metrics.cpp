#include <fstream>

#include "doctest.h"
#include "layerprobe/metrics.hpp"
#include "support.hpp"

using namespace layerprobe;

namespace {

ScoreSet make_set(const std::vector<float>& bona, const std::vector<float>& spoof) {
  ScoreSet s;
  for (std::size_t i = 0; i < bona.size(); ++i) s.entries.push_back({"b" + std::to_string(i), Label::bonafide, bona[i]});
  for (std::size_t i = 0; i < spoof.size(); ++i) s.entries.push_back({"s" + std::to_string(i), Label::spoof, spoof[i]});
  return s;
}

void random_scores(Rng& rng, std::size_t n, std::vector<float>& bona, std::vector<float>& spoof) {
  bona.clear();
  spoof.clear();
  const auto nb = 1 + rng.uniform_index(n - 1);
  const bool coarse = rng.bernoulli(0.5);  // coarse grids force ties
  for (std::size_t i = 0; i < n; ++i) {
    const double shift = i < nb ? 0.7 : 0.0;
    float v = static_cast<float>(rng.uniform(-1, 1) + shift);
    if (coarse) v = static_cast<float>(std::round(v * 4) / 4);
    (i < nb ? bona : spoof).push_back(v);
  }
}

}  // namespace

TEST_CASE("fixed examples") {
  CHECK(compute_eer(make_set({0.9f, 0.8f}, {0.1f, 0.2f})).eer == 0.0);
  CHECK(compute_eer(make_set({0.1f, 0.2f}, {0.9f, 0.8f})).eer == 1.0);
  // one of each class crossed: b = {0.2, 0.8}, s = {0.3, 0.7}
  const auto r = compute_eer(make_set({0.2f, 0.8f}, {0.3f, 0.7f}));
  CHECK(r.eer == 0.5);
  CHECK(r.far_at_threshold == 0.5);
  CHECK(r.frr_at_threshold == 0.5);
}

TEST_CASE("threshold conventions: score at threshold is accepted") {
  // b = {2}, s = {1}: only t = 2 separates them, so a bonafide score equal to t counts as accepted.
  const auto r = compute_eer(make_set({2.f}, {1.f}));
  CHECK(r.eer == 0.0);
  CHECK(r.threshold == 2.0);
  // b = {1}, s = {1}: every candidate gives |FAR - FRR| = 1 and FAR + FRR = 1; the smallest t wins.
  const auto tie = compute_eer(make_set({1.f}, {1.f}));
  CHECK(tie.eer == 0.5);
  CHECK(tie.threshold == -INFINITY);
}

TEST_CASE("equals the brute-force oracle on random score sets") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = 2 + rng.uniform_index(199);
    std::vector<float> b, s;
    random_scores(rng, n, b, s);
    const auto got = compute_eer(b, s);
    const auto want = testing::brute_force_eer(b, s);
    REQUIRE(got.eer == want.eer);
    CHECK(got.far_at_threshold == want.far);
    CHECK(got.frr_at_threshold == want.frr);
  }
}

TEST_CASE("invariances") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<float> b, s;
    random_scores(rng, 2 + rng.uniform_index(60), b, s);
    const double base = compute_eer(b, s).eer;
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);

    auto mono = [](std::vector<float> v) {
      for (auto& x : v) x = x * 8.0f;  // exact in float, strictly increasing
      return v;
    };
    CHECK(compute_eer(mono(b), mono(s)).eer == base);

    auto neg = [](std::vector<float> v) {
      for (auto& x : v) x = -x;
      return v;
    };
    CHECK(compute_eer(neg(s), neg(b)).eer == base);

    auto dup = [](const std::vector<float>& v) {
      std::vector<float> out;
      for (int k = 0; k < 3; ++k) out.insert(out.end(), v.begin(), v.end());
      return out;
    };
    CHECK(compute_eer(dup(b), dup(s)).eer == base);
  }
}

TEST_CASE("EER input errors") {
  CHECK_THROWS_AS(compute_eer(make_set({1.f}, {})), Error);
  CHECK_THROWS_AS(compute_eer(make_set({}, {1.f})), Error);
  CHECK_THROWS_AS(compute_eer(make_set({NAN}, {1.f})), Error);
}

TEST_CASE("mean EER") {
  CHECK(mean_eer(std::vector<EERResult>{{0.0, 0, 0, 0}}) == 0.0);
  const std::vector<EERResult> three = {{0.02, 0, 0, 0}, {0.04, 0, 0, 0}, {0.06, 0, 0, 0}};
  CHECK(mean_eer(three) == doctest::Approx(0.04).epsilon(1e-15));
  CHECK(mean_eer(three) == (0.02 + 0.04 + 0.06) / 3.0);
  CHECK_THROWS_AS(mean_eer(std::vector<EERResult>{}), Error);
}

TEST_CASE("score file round trip") {
  testing::TempDir dir;
  const ScoreSet s = make_set({0.5f, -1.25f}, {3.0f});
  write_scores(s, dir / "s.txt");
  CHECK(read_scores(dir / "s.txt").entries == s.entries);
  std::ifstream in(dir / "s.txt");
  std::string first;
  std::getline(in, first);
  CHECK(first == "b0 bonafide 0.500000");
}

TEST_CASE("score file parse errors name the line") {
  testing::TempDir dir;
  std::ofstream(dir / "bad.txt") << "u1 bonafide abc\n";
  CHECK_THROWS_WITH_AS(read_scores(dir / "bad.txt"), doctest::Contains("parse error at line 1"), Error);
  std::ofstream(dir / "bad2.txt") << "u1 bonafide 0.5\nu2 maybe 0.1\n";
  CHECK_THROWS_WITH_AS(read_scores(dir / "bad2.txt"), doctest::Contains("parse error at line 2"), Error);
  std::ofstream(dir / "bad3.txt") << "u1 0.5\n";
  CHECK_THROWS_AS(read_scores(dir / "bad3.txt"), Error);
}

TEST_CASE("10,000-entry file round trip preserves EER exactly") {
  testing::TempDir dir;
  Rng rng(1);
  ScoreSet s;
  for (int i = 0; i < 10000; ++i) {
    // multiples of 1e-3 survive the 6-decimal text format exactly after float rounding
    const Label label = i % 3 ? Label::spoof : Label::bonafide;
    const int k = static_cast<int>(rng.uniform_index(4001)) - 2000 + (label == Label::bonafide ? 500 : 0);
    s.entries.push_back({"u" + std::to_string(i), label, static_cast<float>(k) / 1000.0f});
  }
  write_scores(s, dir / "big.txt");
  const auto back = read_scores(dir / "big.txt");
  CHECK(back.entries == s.entries);
  CHECK(compute_eer(back).eer == compute_eer(s).eer);
}

TEST_CASE("EER report CSV") {
  testing::TempDir dir;
  const std::vector<EerReportRow> rows = {{"synthetic", 17, 4, "ffn", 0.0125}};
  write_eer_report(rows, dir / "r.csv");
  std::ifstream in(dir / "r.csv");
  std::string h, l;
  std::getline(in, h);
  std::getline(in, l);
  CHECK(h == "dataset,seed,layers,backend,eer");
  CHECK(l == "synthetic,17,4,ffn,0.012500");
}
