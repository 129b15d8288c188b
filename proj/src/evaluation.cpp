#include "t4c/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "t4c/error.hpp"

namespace t4c {

double CoreScore::score() const {
  if (n_scored == 0) return std::numeric_limits<double>::quiet_NaN();
  return total_nll / static_cast<double>(n_scored);
}

void CoreScore::merge(const RecordId& id, const CoreScore& r) {
  total_nll += r.total_nll;
  n_scored += r.n_scored;
  if (r.defined()) per_record[id] = r.score();
}

CoreScore core_metric(std::span<const std::array<double, 3>> probabilities, const LabelBundle& labels,
                      const SegmentGraph& seg_graph) {
  if (probabilities.size() != seg_graph.num_segments) {
    throw ValidationError("core_metric: " + std::to_string(probabilities.size()) + " probability rows for " +
                          std::to_string(seg_graph.num_segments) + " segments");
  }
  CoreScore s;
  for (const auto& [seg, l] : labels.edges) {
    if (!l.cc || *l.cc == 0) continue;
    const auto it = seg_graph.index.find(seg);
    if (it == seg_graph.index.end()) throw DanglingReferenceError("core_metric", "segment", seg);
    const double p = std::clamp(probabilities[it->second][static_cast<std::size_t>(*l.cc - 1)], kProbabilityClip, 1.0);
    s.total_nll += -std::log(p);
    ++s.n_scored;
  }
  if (s.defined()) s.per_record[labels.record_id] = s.score();
  return s;
}

double eta_from_speeds(std::span<const double> lengths_m, std::span<const double> speeds_kph, double floor_kph) {
  if (lengths_m.empty()) throw ValidationError("eta_from_speeds: empty path");
  if (lengths_m.size() != speeds_kph.size()) throw ValidationError("eta_from_speeds: lengths and speeds differ in size");
  if (!(floor_kph > 0.0)) throw ValidationError("eta_from_speeds: speed floor must be > 0");
  double total = 0.0;
  for (std::size_t i = 0; i < lengths_m.size(); ++i) {
    total += lengths_m[i] / (std::max(speeds_kph[i], floor_kph) / 3.6);
  }
  return total;
}

double eta_from_speeds(const SuperSegment& ss, const RoadGraph& graph, std::span<const double> speeds_kph,
                       double floor_kph) {
  std::vector<double> lengths, speeds;
  for (const auto& seg : ss.path) {
    const auto idx = graph.segment_index(seg);
    if (!idx) throw DanglingReferenceError("supersegment " + ss.ss_id, "segment", seg);
    if (*idx >= speeds_kph.size()) throw ValidationError("eta_from_speeds: no predicted speed for " + seg);
    lengths.push_back(graph.segments()[*idx].length_meters);
    speeds.push_back(speeds_kph[*idx]);
  }
  return eta_from_speeds(lengths, speeds, floor_kph);
}

double EtaScore::mae() const {
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return total_abs_error / static_cast<double>(n);
}

EtaScore eta_metric(std::span<const double> predicted, std::span<const double> labeled) {
  if (predicted.size() != labeled.size()) throw ValidationError("eta_metric: misaligned predictions and labels");
  EtaScore s;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    s.total_abs_error += std::abs(predicted[i] - labeled[i]);
    ++s.n;
  }
  return s;
}

}  // namespace t4c
