#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "t4c/dataset.hpp"
#include "t4c/ndauto.hpp"
#include "t4c/segment_graph.hpp"

namespace t4c {

struct ModelConfig {
  // Embedding widths for importance, oneway, tunnel, lanes.
  int emb_importance = 5;
  int emb_oneway = 2;
  int emb_tunnel = 2;
  int emb_lanes = 3;
  std::vector<int> volume_hidden{32, 32};
  int static_hidden = 32;
  int gnn_layers = 3;
  int hidden = 64;
  int head_blocks = 2;
  std::array<double, 3> lambda{0.03, 1.0, 1.0};
  PriorMode prior_mode = PriorMode::kFull;
  int num_clusters = 10;
  int cc_head = 3;  // 3: green/yellow/red with cc=0 masked; 4: all four codes
  // Ablation switches.
  bool use_prior = true;         // false zeroes the prior block and cluster indicator
  bool use_static = true;        // false zeroes static attribute inputs
  std::uint64_t seed = 0;

  std::size_t static_input_width() const;
  std::size_t volume_input_width() const;
  std::size_t prior_width() const;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
/// Hash of every architectural field; the seed is excluded so ensemble members share it.
std::string config_hash(const ModelConfig& cfg);

/// Differentiable head outputs for one record.
struct ModelOutputs {
  nd::Var cc_logits;   // N x cc_head
  nd::Var speed;       // N x 1, z-normalised km/h
  nd::Var vol_logits;  // N x 3
};

struct PredictionBundle {
  nd::Tensor cc_logits;
  nd::Tensor speed_pred;
  nd::Tensor vol_logits;

  bool operator==(const PredictionBundle&) const = default;
};

/// Per-segment supervision aligned to SegmentGraph order.
struct LabelTargets {
  std::vector<int> cc;  // class index or nd::kMasked
  std::vector<double> speed;  // z-normalised
  std::vector<std::uint8_t> speed_mask;
  std::vector<int> vol;
};

LabelTargets make_targets(const SegmentGraph& seg_graph, const LabelBundle* labels, const NormStats& norm,
                          int cc_head = 3);

/// Maps vol_class {1,3,5} -> {0,1,2}.
int volume_class_index(int vol_class);

struct ClassWeights {
  std::vector<double> cc{1.0, 1.0, 1.0};
  std::vector<double> vol{1.0, 1.0, 1.0};

  bool operator==(const ClassWeights&) const = default;
};

/// Inverse-frequency weights N / (C * N_k), clipped to [0.1, 10]; empty classes get 10.
std::vector<double> inverse_frequency_weights(const std::vector<std::size_t>& counts);
ClassWeights fit_class_weights(const std::vector<LabelTargets>& train_targets, int cc_head = 3);

struct LossReport {
  double L_c = 0.0;
  double L_s = 0.0;
  double L_v = 0.0;
  double L = 0.0;
  std::size_t n_c = 0;
  std::size_t n_s = 0;
  std::size_t n_v = 0;
  bool cc_masked() const { return n_c == 0; }
  bool speed_masked() const { return n_s == 0; }
  bool vol_masked() const { return n_v == 0; }
};

struct LossTerms {
  nd::Var total;
  LossReport report;
};

/// Weighted CE for congestion and volume class, MSE for speed, combined as
/// lambda1 * L_c + lambda2 * L_s + lambda3 * L_v.
LossTerms compute_loss(const ModelOutputs& out, const LabelTargets& targets, const ClassWeights& weights,
                       const std::array<double, 3>& lambda);

/// The combination used by compute_loss, exposed so reports can be cross-checked.
double combine_losses(double l_c, double l_s, double l_v, const std::array<double, 3>& lambda);

struct SegmentProbabilities {
  std::vector<std::array<double, 3>> cc;   // green, yellow, red
  std::vector<std::array<double, 3>> vol;  // classes 1, 3, 5
  std::vector<double> speed_kph;

  bool operator==(const SegmentProbabilities&) const = default;
};

SegmentProbabilities predict_probabilities(const PredictionBundle& pred, const NormStats& norm);

class TrafficModel {
 public:
  /// Fresh parameters, initialised from config.seed.
  explicit TrafficModel(ModelConfig config);
  /// Adopts existing parameters; throws if names or shapes disagree with the config.
  TrafficModel(ModelConfig config, nd::ParamStore params);

  const ModelConfig& config() const { return config_; }
  nd::ParamStore& params() { return params_; }
  const nd::ParamStore& params() const { return params_; }

  ModelOutputs forward(const SegmentGraph& graph, const FeatureBundle& features) const;
  PredictionBundle predict(const SegmentGraph& graph, const FeatureBundle& features) const;

 private:
  ModelConfig config_;
  nd::ParamStore params_;
};

}  // namespace t4c
