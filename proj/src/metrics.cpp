#include "layerprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "layerprobe/common.hpp"

namespace layerprobe {

EERResult compute_eer(std::span<const float> bonafide, std::span<const float> spoof) {
  if (bonafide.empty() || spoof.empty()) throw Error("EER needs at least one bonafide and one spoof score");
  for (float s : bonafide) require(std::isfinite(s), "non-finite score");
  for (float s : spoof) require(std::isfinite(s), "non-finite score");

  std::vector<float> b(bonafide.begin(), bonafide.end());
  std::vector<float> s(spoof.begin(), spoof.end());
  std::sort(b.begin(), b.end());
  std::sort(s.begin(), s.end());
  const auto nb = static_cast<std::int64_t>(b.size());
  const auto ns = static_cast<std::int64_t>(s.size());

  std::vector<double> candidates;
  candidates.reserve(b.size() + s.size() + 2);
  candidates.push_back(-std::numeric_limits<double>::infinity());
  std::merge(b.begin(), b.end(), s.begin(), s.end(), std::back_inserter(candidates));
  candidates.push_back(std::numeric_limits<double>::infinity());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  // Rates compared as exact rationals: FRR = rej / nb, FAR = acc / ns.
  std::int64_t best_diff = -1, best_sum = 0;
  std::int64_t best_rej = 0, best_acc = 0;
  double best_t = 0.0;
  std::size_t bi = 0, si = 0;
  for (double t : candidates) {
    while (bi < b.size() && b[bi] < t) ++bi;
    while (si < s.size() && s[si] < t) ++si;
    const std::int64_t rej = static_cast<std::int64_t>(bi);
    const std::int64_t acc = ns - static_cast<std::int64_t>(si);
    const std::int64_t diff = std::llabs(acc * nb - rej * ns);
    const std::int64_t sum = acc * nb + rej * ns;
    if (best_diff < 0 || diff < best_diff || (diff == best_diff && sum < best_sum)) {
      best_diff = diff;
      best_sum = sum;
      best_rej = rej;
      best_acc = acc;
      best_t = t;
    }
  }

  EERResult r;
  r.threshold = best_t;
  r.frr_at_threshold = static_cast<double>(best_rej) / static_cast<double>(nb);
  r.far_at_threshold = static_cast<double>(best_acc) / static_cast<double>(ns);
  r.eer = (r.far_at_threshold + r.frr_at_threshold) / 2.0;
  return r;
}

EERResult compute_eer(const ScoreSet& scores) {
  std::vector<float> bona, spoof;
  for (const auto& e : scores.entries) (e.label == Label::bonafide ? bona : spoof).push_back(e.score);
  return compute_eer(bona, spoof);
}

double mean_eer(std::span<const EERResult> results) {
  if (results.empty()) throw Error("mean of an empty EER list");
  double sum = 0.0;
  for (const auto& r : results) sum += r.eer;
  return sum / static_cast<double>(results.size());
}

void write_scores(const ScoreSet& scores, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write score file " + path.string());
  char buf[64];
  for (const auto& e : scores.entries) {
    std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(e.score));
    out << e.utt_id << ' ' << to_string(e.label) << ' ' << buf << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

ScoreSet read_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read score file " + path.string());
  ScoreSet set;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    std::istringstream ls(line);
    std::vector<std::string> fields;
    for (std::string f; ls >> f;) fields.push_back(std::move(f));
    if (fields.empty()) continue;
    const std::string where = path.string() + ": parse error at line " + std::to_string(line_no);
    if (fields.size() != 3) throw Error(where + ": expected 'utt_id label score'");
    ScoreEntry e;
    e.utt_id = fields[0];
    try {
      e.label = parse_label(fields[1]);
    } catch (const Error& err) {
      throw Error(where + ": " + err.what());
    }
    char* end = nullptr;
    e.score = std::strtof(fields[2].c_str(), &end);
    if (end != fields[2].c_str() + fields[2].size() || !std::isfinite(e.score)) {
      throw Error(where + ": bad score '" + fields[2] + "'");
    }
    set.entries.push_back(std::move(e));
  }
  return set;
}

void write_eer_report(std::span<const EerReportRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "dataset,seed,layers,backend,eer\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.eer);
    out << r.dataset << ',' << r.seed << ',' << r.layers << ',' << r.backend << ',' << buf << '\n';
  }
}

}  // namespace layerprobe
