#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "t4c/clustering.hpp"
#include "t4c/dataset.hpp"
#include "t4c/ndauto.hpp"

namespace t4c {

/// Segments-as-nodes graph: two segments are adjacent when they share an endpoint node.
struct SegmentGraph {
  std::size_t num_segments = 0;
  nd::Adjacency adjacency;  // sorted, symmetric, no self-loops
  std::vector<SegmentId> ids;
  std::unordered_map<SegmentId, std::size_t> index;
};

SegmentGraph build_line_graph(const RoadGraph& graph);

/// Undirected node adjacency of the original road graph (used by the node-level baseline).
nd::Adjacency node_adjacency(const RoadGraph& graph);

inline constexpr std::size_t kCounterSlice = 2 * kVolumeBins;  // tail 4 bins, head 4 bins

enum class PriorMode { kFull, kActiveRow };

std::string to_string(PriorMode mode);
PriorMode parse_prior_mode(const std::string& s);

struct NormStats {
  std::array<double, kNumContinuous> cont_mean{};
  std::array<double, kNumContinuous> cont_std{};
  std::array<double, kCounterSlice> counter_mean{};
  std::array<double, kCounterSlice> counter_std{};
  double log_volume_mean = 0.0;  // log1p(volumeSum)
  double log_volume_std = 1.0;
  double speed_mean = 0.0;  // km/h, regression target normalisation
  double speed_std = 1.0;

  bool operator==(const NormStats&) const = default;
};

inline constexpr double kStdFloor = 1e-6;

/// Per-feature mean and population sigma (floored) over the training records.
NormStats fit_normalization(const RoadGraph& graph, const std::vector<VolumeRecord>& train_records);

/// Sets speed_mean / speed_std from speed labels of the given bundles.
void fit_speed_normalization(NormStats& stats, const std::vector<LabelBundle>& labels);

/// Raw tail/head counter volumes of a segment; zeros where no counter reading exists.
std::array<double, kCounterSlice> counter_slice(const RoadGraph& graph, const SegmentRec& segment,
                                                const VolumeRecord& record);

/// Per-segment raw model inputs for one record.
struct FeatureBundle {
  std::size_t num_segments = 0;
  int num_clusters = 0;
  int cluster = 0;  // record's assigned volumeSum cluster
  std::array<std::vector<int>, 4> categorical;  // importance, oneway, tunnel, lanes-1
  nd::Tensor continuous;     // N x 5, z-normalised
  nd::Tensor counter_raw;    // N x 8, raw volumes (>= 0)
  nd::Tensor counter;        // N x 8, z-normalised
  nd::Tensor prior;          // N x 3K (full) or N x 3 (active row)
  nd::Tensor global;         // N x (K + 1): cluster one-hot and normalised log volumeSum, same for every row

  bool operator==(const FeatureBundle&) const = default;
};

FeatureBundle assemble_features(const RoadGraph& graph, const SegmentGraph& seg_graph, const VolumeRecord& record,
                                const PriorSet& priors, const NormStats& norm, const ClusterModel& clusters,
                                PriorMode mode = PriorMode::kFull);

}  // namespace t4c
