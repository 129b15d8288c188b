#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "t4c/clustering.hpp"
#include "t4c/dataset.hpp"
#include "t4c/evaluation.hpp"
#include "t4c/ndauto.hpp"
#include "t4c/segment_graph.hpp"
#include "t4c/training.hpp"

namespace t4c {

/// Lower median: element (n-1)/2 of the sorted sample.
double lower_median(std::vector<double> values);

struct NaiveCountModel {
  bool global = false;  // one city-wide distribution for every segment
  CongestionDistribution global_dist{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  std::map<SegmentId, CongestionDistribution> segments;
  std::map<std::string, double> eta;  // supersegment -> median seconds

  CongestionDistribution cc(const SegmentId& segment) const;
  std::optional<double> eta_for(const std::string& ss_id) const;
  bool operator==(const NaiveCountModel&) const = default;
};

/// `labels` and the ETA samples taken from `supersegments` are restricted to `records`.
NaiveCountModel fit_naive(const std::vector<LabelBundle>& labels, const std::vector<SuperSegment>& supersegments,
                          const std::set<RecordId>& records, bool global = false);

struct VolumeClusterModel {
  ClusterModel clusters;
  PriorSet priors;
  std::map<std::string, std::vector<std::optional<double>>> eta;  // supersegment -> per-cluster median
  NaiveCountModel naive;

  CongestionDistribution cc(int cluster, const SegmentId& segment) const;
  std::optional<double> eta_for(int cluster, const std::string& ss_id) const;
  bool operator==(const VolumeClusterModel&) const = default;
};

/// Records are those in the cluster model's assignment.
VolumeClusterModel fit_volume_cluster(const ClusterModel& clusters, const std::vector<LabelBundle>& labels,
                                      const std::vector<SuperSegment>& supersegments, const RoadGraph& graph);

nlohmann::json to_json(const NaiveCountModel& m);
NaiveCountModel naive_from_json(const nlohmann::json& j);
nlohmann::json to_json(const VolumeClusterModel& m);
VolumeClusterModel volume_cluster_from_json(const nlohmann::json& j);

// ---- node-level GNN on the original graph ----------------------------------------------

struct NodeGnnConfig {
  int hidden = 32;
  int layers = 3;
  std::uint64_t seed = 0;

  bool operator==(const NodeGnnConfig&) const = default;
};

/// Per-bin volume statistics over counter nodes of the training records.
struct NodeNorm {
  std::array<double, 4> mean{0, 0, 0, 0};
  std::array<double, 4> std{1, 1, 1, 1};
  bool operator==(const NodeNorm&) const = default;
};

inline constexpr std::size_t kNodeFeatures = 5;  // 4 normalised bins + counter indicator

NodeNorm fit_node_norm(const RoadGraph& graph, const std::vector<const VolumeRecord*>& records);
/// Counter volumes on counter nodes, zeros elsewhere.
nd::Tensor node_features(const RoadGraph& graph, const VolumeRecord& record, const NodeNorm& norm);

class NodeGnnModel {
 public:
  NodeGnnModel(const RoadGraph& graph, NodeGnnConfig cfg);
  NodeGnnModel(const RoadGraph& graph, NodeGnnConfig cfg, nd::ParamStore params);

  /// Edge logits (segments x 3) from concat(tail state, head state).
  nd::Var forward(const nd::Tensor& features) const;
  std::vector<CongestionDistribution> predict(const nd::Tensor& features) const;

  nd::ParamStore& params() { return params_; }
  const nd::ParamStore& params() const { return params_; }
  const NodeGnnConfig& config() const { return cfg_; }

 private:
  NodeGnnConfig cfg_;
  nd::Adjacency adjacency_;
  std::vector<int> tail_;
  std::vector<int> head_;
  nd::ParamStore params_;
};

struct NodeGnnResult {
  NodeGnnConfig config;
  NodeNorm norm;
  nd::ParamStore params;
  RunLog log;
  CoreScore validation;
};

/// Trains with the shared loop on the daytime split of `cfg`; cc labels only.
NodeGnnResult node_gnn_baseline(const Dataset& dataset, const TrainConfig& cfg, const NodeGnnConfig& gnn_cfg);

nlohmann::json to_json(const NodeGnnResult& r);
NodeGnnResult node_gnn_from_json(const nlohmann::json& j);

}  // namespace t4c
