#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "t4c/checkpoint.hpp"
#include "t4c/clustering.hpp"
#include "t4c/dataset.hpp"
#include "t4c/error.hpp"
#include "t4c/evaluation.hpp"
#include "t4c/model.hpp"

namespace t4c {

struct TrainConfig {
  int epochs = 20;
  int batch = 2;  // records per optimizer step, via gradient accumulation
  double lr = 1e-3;
  std::uint64_t seed = 0;  // member k trains with seed + k
  int ensemble = 9;
  int day_start = kDaytimeStart;
  int day_end = kDaytimeEnd;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 7;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& cfg);

/// Daytime filter followed by the day-level split; shared by clustering and training.
Split prepare_split(const Dataset& dataset, const TrainConfig& cfg);

/// Everything a training run reads, computed once and shared read-only across members.
struct PreparedData {
  SegmentGraph seg_graph;
  NormStats norm;
  std::vector<const VolumeRecord*> train;
  std::vector<const VolumeRecord*> validation;
  std::vector<FeatureBundle> train_features;
  std::vector<FeatureBundle> val_features;
  std::vector<LabelTargets> train_targets;
  std::vector<const LabelBundle*> val_labels;  // nullptr when a record has no labels
  ClassWeights weights;
};

/// Records are taken from `dataset` (which must outlive the result).
PreparedData prepare_data(const Dataset& dataset, const ClusterArtifact& clusters, const TrainConfig& cfg,
                          const ModelConfig& model_cfg);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double loss_c = 0.0;
  double loss_s = 0.0;
  double loss_v = 0.0;
  double val_core = 0.0;
  double wall_time_s = 0.0;     // excluded from the serialised run log
  std::string order_hash;       // hash of the record order used this epoch

  bool operator==(const EpochLog& o) const {
    return epoch == o.epoch && loss == o.loss && loss_c == o.loss_c && loss_s == o.loss_s && loss_v == o.loss_v &&
           val_core == o.val_core && order_hash == o.order_hash;
  }
};

struct RunLog {
  std::uint64_t seed = 0;
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  double first_step_loss = 0.0;

  bool operator==(const RunLog&) const = default;
};

nlohmann::json to_json(const RunLog& log);
RunLog run_log_from_json(const nlohmann::json& j);

/// Thrown when a loss turns non-finite. Carries the log up to the last finite epoch.
class TrainingDiverged : public RuntimeFailure {
 public:
  TrainingDiverged(const std::string& what, RunLog partial) : RuntimeFailure(what), partial_(std::move(partial)) {}
  const RunLog& partial() const { return partial_; }

 private:
  RunLog partial_;
};

/// A model-agnostic training target for the shared loop.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual nd::ParamStore& params() = 0;
  virtual std::size_t num_train() const = 0;
  virtual LossTerms train_loss(std::size_t index) = 0;
  virtual double validation_core() = 0;
};

struct LoopResult {
  RunLog log;
  nd::ParamStore best;
};

/// Seeded per-epoch shuffling, gradient accumulation over `batch` records, Adam, and
/// validation-based selection of the best epoch.
LoopResult run_training(Objective& objective, const TrainConfig& cfg, std::uint64_t seed);

/// One optimizer step over the given training indices (mean of their gradients).
void accumulate_and_step(Objective& objective, std::span<const std::size_t> indices, const nd::AdamConfig& adam,
                         LossReport* mean_report = nullptr);

struct TrainResult {
  Checkpoint checkpoint;
  RunLog log;
};

TrainResult train_one(const TrainConfig& cfg, const ModelConfig& model_cfg, const PreparedData& data,
                      std::uint64_t seed);

/// Members differ only by seed (cfg.seed + k). Runs up to `threads` members concurrently.
std::vector<TrainResult> train_ensemble(const TrainConfig& cfg, const ModelConfig& model_cfg,
                                        const PreparedData& data, unsigned threads = 1);

/// Validation core metric of one model on the prepared validation records.
CoreScore evaluate_core(const TrafficModel& model, const PreparedData& data);

/// Mean of member softmax probabilities and de-normalised speeds, in member order.
SegmentProbabilities ensemble_predict(const std::vector<const Checkpoint*>& members, const Dataset& dataset,
                                      const SegmentGraph& seg_graph, const ClusterArtifact& clusters,
                                      const VolumeRecord& record);

/// Element-wise mean in fixed member order; shared by ensemble_predict.
SegmentProbabilities average_probabilities(const std::vector<SegmentProbabilities>& members);

/// Reads T4C_THREADS, defaulting to hardware concurrency (at least 1).
unsigned thread_budget();

}  // namespace t4c
