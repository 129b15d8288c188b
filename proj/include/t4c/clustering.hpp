#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <vector>

#include "t4c/dataset.hpp"

namespace t4c {

inline constexpr int kDefaultClusters = 10;

/// Sum of all 4-bin volumes over the counters present in the record.
double volume_sum(const VolumeRecord& record);

/// Equal-frequency binning of records by volumeSum.
struct ClusterModel {
  int num_clusters = kDefaultClusters;
  std::vector<double> thresholds;  // K-1 lower bin edges, non-decreasing
  std::map<RecordId, int> assignment;  // training records -> cluster

  bool operator==(const ClusterModel&) const = default;
};

using CongestionDistribution = std::array<double, 3>;  // (green incl. undefined, yellow, red)

struct PriorMatrix {
  SegmentId segment_id;
  std::vector<CongestionDistribution> rows;  // K rows
  std::vector<int> support;                  // labeled records per cluster

  bool operator==(const PriorMatrix&) const = default;
};

using PriorSet = std::map<SegmentId, PriorMatrix>;

/// Stable sort by (volume_sum, record_id); rank r goes to cluster floor(r*K/N).
ClusterModel fit_clusters(const std::vector<VolumeRecord>& records, int num_clusters = kDefaultClusters);

/// Number of thresholds <= volume_sum(record).
int assign_cluster(const ClusterModel& model, const VolumeRecord& record);
int assign_cluster(const ClusterModel& model, double volume_sum);

/// Maps cc in {0,1} -> 0, 2 -> 1, 3 -> 2.
int congestion_bucket(int cc);

/// Per-segment K x 3 empirical congestion distributions per cluster. Labels whose record is not
/// in the model's training assignment are ignored. Zero-support rows use the segment's
/// all-cluster distribution, or uniform if the segment has no labels at all.
PriorSet build_prior_matrices(const ClusterModel& model, const std::vector<LabelBundle>& labels,
                              const RoadGraph& graph);

struct ClusterArtifact {
  ClusterModel model;
  PriorSet priors;

  bool operator==(const ClusterArtifact&) const = default;
};

void write_cluster_model(const ClusterArtifact& artifact, const std::filesystem::path& path);
ClusterArtifact read_cluster_model(const std::filesystem::path& path);

}  // namespace t4c
