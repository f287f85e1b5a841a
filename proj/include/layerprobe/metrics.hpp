#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "layerprobe/dataset.hpp"

namespace layerprobe {

struct ScoreEntry {
  std::string utt_id;
  Label label = Label::bonafide;
  float score = 0.0f;  // higher means more bonafide

  friend bool operator==(const ScoreEntry&, const ScoreEntry&) = default;
};

struct ScoreSet {
  std::vector<ScoreEntry> entries;
};

struct EERResult {
  double eer = 0.0;
  double threshold = 0.0;
  double far_at_threshold = 0.0;
  double frr_at_threshold = 0.0;
};

/// Step-function EER at empirical thresholds.
///   FRR(t) = #bonafide with score <  t / #bonafide
///   FAR(t) = #spoof    with score >= t / #spoof
/// Candidates are every distinct score plus -inf and +inf. The chosen threshold minimizes
/// |FAR - FRR|, ties broken by smaller FAR + FRR, then by smaller t; eer = (FAR + FRR) / 2.
EERResult compute_eer(const ScoreSet& scores);
EERResult compute_eer(std::span<const float> bonafide, std::span<const float> spoof);

/// Mean of the eer fields, summed in order.
double mean_eer(std::span<const EERResult> results);

/// Lines "utt_id label score", score printed with 6 decimals.
void write_scores(const ScoreSet& scores, const std::filesystem::path& path);
ScoreSet read_scores(const std::filesystem::path& path);

struct EerReportRow {
  std::string dataset;
  std::uint64_t seed = 0;
  int layers = 0;
  std::string backend;
  double eer = 0.0;
};

/// CSV with header "dataset,seed,layers,backend,eer".
void write_eer_report(std::span<const EerReportRow> rows, const std::filesystem::path& path);

}  // namespace layerprobe
