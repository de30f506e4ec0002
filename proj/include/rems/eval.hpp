#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rems/error.hpp"
#include "rems/streaming.hpp"

namespace rems {

struct GroundTruthInterval {
  int class_id = 0;
  std::uint64_t start_raw_frame = 0;
  std::uint64_t end_raw_frame = 0;
};

struct EvalReport {
  double accuracy = 0.0;                 // trimmed-clip mode
  std::map<int, double> per_class_ap;   // stream mode, classes with ground truth
  double map = 0.0;                      // mean of per_class_ap
  std::map<std::pair<int, int>, std::size_t> confusion;  // (label, prediction) -> count
  double mean_latency_seconds = 0.0;
  std::size_t matched = 0;
  std::size_t false_positives = 0;
  std::size_t missed = 0;
};

// Fraction of exact matches.
inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.empty()) throw ValidationError("accuracy of an empty set is undefined");
  if (predictions.size() != labels.size())
    throw DimensionMismatch("prediction/label count mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// Temporal intersection-over-union treating [start, end] as real segments.
inline double temporal_iou(std::uint64_t s1, std::uint64_t e1, std::uint64_t s2,
                           std::uint64_t e2) {
  const double inter = std::max(
      0.0, static_cast<double>(std::min(e1, e2)) - static_cast<double>(std::max(s1, s2)));
  const double len1 = static_cast<double>(e1 - s1);
  const double len2 = static_cast<double>(e2 - s2);
  const double uni = len1 + len2 - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct MatchResult {
  // detection index -> ground truth index, aligned with the score-sorted order
  std::vector<int> matched_truth;     // -1 = false positive
  std::vector<std::size_t> order;     // score-descending permutation of the input
  std::size_t matched_count = 0;
};

// Greedy matching in score order: each detection takes the unmatched ground
// truth of its own class with the highest IoU >= threshold. No ground truth
// is matched twice, and classes never mix.
inline MatchResult match_detections(const std::vector<DetectionEvent>& detections,
                                    const std::vector<GroundTruthInterval>& truth,
                                    double iou_threshold = 0.5) {
  MatchResult res;
  res.order.resize(detections.size());
  for (std::size_t i = 0; i < detections.size(); ++i) res.order[i] = i;
  std::stable_sort(res.order.begin(), res.order.end(), [&](std::size_t a, std::size_t b) {
    if (detections[a].score != detections[b].score)
      return detections[a].score > detections[b].score;
    return detections[a].start_raw_frame < detections[b].start_raw_frame;
  });

  std::vector<bool> taken(truth.size(), false);
  res.matched_truth.assign(detections.size(), -1);
  for (std::size_t rank = 0; rank < res.order.size(); ++rank) {
    const DetectionEvent& det = detections[res.order[rank]];
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < truth.size(); ++g) {
      if (taken[g] || truth[g].class_id != det.class_id) continue;
      const double iou = temporal_iou(det.start_raw_frame, det.end_raw_frame,
                                      truth[g].start_raw_frame, truth[g].end_raw_frame);
      if (iou >= iou_threshold && iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = true;
      res.matched_truth[rank] = best;
      ++res.matched_count;
    }
  }
  return res;
}

// All-point interpolated area under the precision-recall curve for one class.
// Classes without ground truth have no defined AP and must be excluded by the
// caller.
inline double average_precision(const std::vector<DetectionEvent>& detections,
                                const std::vector<GroundTruthInterval>& truth, int class_id,
                                double iou_threshold = 0.5) {
  std::vector<GroundTruthInterval> class_truth;
  for (const auto& g : truth)
    if (g.class_id == class_id) class_truth.push_back(g);
  if (class_truth.empty())
    throw ValidationError("AP undefined for class " + std::to_string(class_id) +
                          " with no ground truth");
  std::vector<DetectionEvent> class_dets;
  for (const auto& d : detections)
    if (d.class_id == class_id) class_dets.push_back(d);
  if (class_dets.empty()) return 0.0;

  const MatchResult match = match_detections(class_dets, class_truth, iou_threshold);
  const std::size_t n = class_dets.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < n; ++rank) {
    if (match.matched_truth[rank] >= 0) ++tp;
    precision[rank] = static_cast<double>(tp) / static_cast<double>(rank + 1);
    recall[rank] = static_cast<double>(tp) / static_cast<double>(class_truth.size());
  }
  // upper envelope from the right
  for (std::size_t i = n - 1; i-- > 0;) precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

// Event-level report over a detection log: per-class AP over the classes
// present in the ground truth, their mean, match counters, and the mean
// decision latency of the log.
inline EvalReport evaluate_stream(const std::vector<DetectionEvent>& detections,
                                  const std::vector<GroundTruthInterval>& truth,
                                  double iou_threshold = 0.5, double fps = 30.0) {
  EvalReport report;
  std::set<int> classes;
  for (const auto& g : truth) classes.insert(g.class_id);
  double ap_sum = 0.0;
  for (int c : classes) {
    const double ap = average_precision(detections, truth, c, iou_threshold);
    report.per_class_ap[c] = ap;
    ap_sum += ap;
  }
  report.map = classes.empty() ? 0.0 : ap_sum / static_cast<double>(classes.size());

  const MatchResult match = match_detections(detections, truth, iou_threshold);
  report.matched = match.matched_count;
  report.false_positives = detections.size() - match.matched_count;
  report.missed = truth.size() - match.matched_count;

  if (!detections.empty()) {
    double sum = 0.0;
    for (const auto& d : detections)
      sum += static_cast<double>(d.decision_raw_frame - d.start_raw_frame);
    report.mean_latency_seconds = sum / static_cast<double>(detections.size()) / fps;
  }
  return report;
}

// Ground-truth file: one interval per line, tab-separated:
//   class_id  start_raw_frame  end_raw_frame
inline std::vector<GroundTruthInterval> read_ground_truth(std::istream& in) {
  std::vector<GroundTruthInterval> truth;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    GroundTruthInterval g;
    long long cls = 0, start = 0, end = 0;
    if (!(ss >> cls >> start >> end) || start < 0 || end <= start)
      throw ParseError("ground truth line " + std::to_string(lineno) + ": bad interval");
    g.class_id = static_cast<int>(cls);
    g.start_raw_frame = static_cast<std::uint64_t>(start);
    g.end_raw_frame = static_cast<std::uint64_t>(end);
    truth.push_back(g);
  }
  return truth;
}

inline std::vector<GroundTruthInterval> read_ground_truth_file(
    const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  return read_ground_truth(is);
}

inline void write_ground_truth_file(const std::filesystem::path& path,
                                    const std::vector<GroundTruthInterval>& truth) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& g : truth)
    os << g.class_id << '\t' << g.start_raw_frame << '\t' << g.end_raw_frame << '\n';
  if (!os) throw IoError("short write to " + path.string());
}

}  // namespace rems
