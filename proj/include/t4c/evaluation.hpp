#pragma once

#include <array>
#include <map>
#include <span>
#include <vector>

#include "t4c/dataset.hpp"
#include "t4c/segment_graph.hpp"

namespace t4c {

inline constexpr double kProbabilityClip = 1e-15;
inline constexpr double kDefaultSpeedFloorKph = 5.0;

/// Masked cross-entropy over green/yellow/red; cc = 0 and unlabeled segments are skipped.
struct CoreScore {
  double total_nll = 0.0;
  std::size_t n_scored = 0;
  std::map<RecordId, double> per_record;

  bool defined() const { return n_scored > 0; }
  /// Mean over all scored (record, segment) pairs; NaN when undefined.
  double score() const;
  void merge(const RecordId& id, const CoreScore& record_score);
};

/// probabilities[i] belongs to seg_graph.ids[i].
CoreScore core_metric(std::span<const std::array<double, 3>> probabilities, const LabelBundle& labels,
                      const SegmentGraph& seg_graph);

/// Sum over the path of length / (max(speed, floor) / 3.6), in seconds.
double eta_from_speeds(std::span<const double> lengths_m, std::span<const double> speeds_kph,
                       double speed_floor_kph = kDefaultSpeedFloorKph);

/// Gathers path lengths and speeds (speeds aligned with graph segment order).
double eta_from_speeds(const SuperSegment& ss, const RoadGraph& graph, std::span<const double> speeds_kph,
                       double speed_floor_kph = kDefaultSpeedFloorKph);

struct EtaScore {
  double total_abs_error = 0.0;
  std::size_t n = 0;
  bool defined() const { return n > 0; }
  double mae() const;
};

/// Mean absolute error in seconds over aligned pairs.
EtaScore eta_metric(std::span<const double> predicted, std::span<const double> labeled);

}  // namespace t4c
