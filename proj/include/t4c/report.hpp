#pragma once

#include <string>
#include <utility>
#include <vector>

#include "t4c/clustering.hpp"
#include "t4c/dataset.hpp"
#include "t4c/evaluation.hpp"
#include "t4c/model.hpp"
#include "t4c/training.hpp"

namespace t4c {

enum class Variant { kFull, kNoCluster, kNoStatic, kNoGnn };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
/// Applies the ablation to a base config; everything else is left untouched.
ModelConfig variant_config(const ModelConfig& base, Variant v);

struct AblationRow {
  Variant variant = Variant::kFull;
  CoreScore score;
  int best_epoch = 0;
  std::string order_hash;  // combined per-epoch record-order hashes
  RunLog log;
};

/// Trains one member per variant with identical data, seed and epochs.
std::vector<AblationRow> run_ablation(const Dataset& dataset, const ClusterArtifact& clusters, const TrainConfig& cfg,
                                      const ModelConfig& base, const std::vector<Variant>& variants);

/// variant,core_score,delta_vs_full,n_scored,best_epoch,order_hash
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Validation core (and training loss) per epoch, one polyline per run.
std::string score_curves_svg(const std::vector<std::pair<std::string, RunLog>>& runs);

struct MetricRow {
  std::string name;
  std::string metric;  // "core" or "eta"
  double value = 0.0;
  std::size_t n = 0;
};

std::string metrics_markdown(const std::vector<MetricRow>& rows,
                             const std::vector<std::pair<std::string, RunLog>>& runs);

}  // namespace t4c
