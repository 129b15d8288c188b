#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "t4c/dataset.hpp"
#include "t4c/evaluation.hpp"

namespace t4c {

/// One line of a prediction file. Every producer (model, ensemble, baselines) writes this
/// shape so both eval subcommands score them through the same path.
struct RecordPrediction {
  RecordId record_id;
  std::map<SegmentId, std::array<double, 3>> cc;   // green, yellow, red
  std::map<SegmentId, double> speed_kph;           // optional
  std::map<SegmentId, std::array<double, 3>> vol;  // optional
  std::map<std::string, double> eta;               // optional direct ETAs, seconds

  bool operator==(const RecordPrediction&) const = default;
};

std::string encode_predictions(const std::vector<RecordPrediction>& preds);
std::vector<RecordPrediction> decode_predictions(const std::string& text, const std::string& source = "<memory>");
void write_predictions(const std::vector<RecordPrediction>& preds, const std::filesystem::path& path);
std::vector<RecordPrediction> read_predictions(const std::filesystem::path& path);

/// Core metric over every predicted record that has labels.
CoreScore score_core(const std::vector<RecordPrediction>& preds, const Dataset& dataset);

/// ETA MAE over (record, supersegment) label pairs of predicted records. Direct ETAs win;
/// otherwise the ETA is synthesised from predicted speeds.
EtaScore score_eta(const std::vector<RecordPrediction>& preds, const Dataset& dataset,
                   double speed_floor_kph = kDefaultSpeedFloorKph);

}  // namespace t4c
