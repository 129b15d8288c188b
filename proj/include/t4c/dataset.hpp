#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace t4c {

using NodeId = std::string;
using SegmentId = std::string;
using RecordId = std::string;

inline constexpr int kFormatVersion = 1;
inline constexpr int kDaySlots = 96;
inline constexpr int kVolumeBins = 4;
inline constexpr int kDaytimeStart = 24;  // 06:00
inline constexpr int kDaytimeEnd = 88;    // 22:00

struct NodeRec {
  NodeId node_id;
  double lat = 0.0;
  double lon = 0.0;
  std::optional<std::string> counter_id;

  bool operator==(const NodeRec&) const = default;
};

/// Bit flags marking continuous attributes that were missing on disk and imputed.
enum ImputedField : std::uint8_t {
  kImputedParsedMaxspeed = 1 << 0,
  kImputedFlowSpeed = 1 << 1,
  kImputedLength = 1 << 2,
  kImputedCounterDistance = 1 << 3,
  kImputedLimitSpeed = 1 << 4,
};

inline constexpr int kNumContinuous = 5;
inline constexpr int kImportanceVocab = 6;
inline constexpr int kLanesVocab = 4;  // buckets 1, 2, 3, 4+

struct SegmentRec {
  SegmentId segment_id;
  NodeId tail_node;
  NodeId head_node;
  int importance = 0;  // 0..5
  int oneway = 0;      // 0/1
  int tunnel = 0;      // 0/1
  int lanes = 1;       // 1..4, where 4 means "4 or more"
  double parsed_maxspeed = 0.0;
  double flow_speed = 0.0;
  double length_meters = 1.0;
  double counter_distance = 0.0;
  double limit_speed = 0.0;
  std::uint8_t imputed = 0;

  /// (parsed_maxspeed, flow_speed, length_meters, counter_distance, limit_speed)
  std::array<double, kNumContinuous> continuous() const {
    return {parsed_maxspeed, flow_speed, length_meters, counter_distance, limit_speed};
  }

  bool operator==(const SegmentRec&) const = default;
};

/// Road network with directed segments and sparse loop counters. Immutable once built.
class RoadGraph {
 public:
  RoadGraph() = default;
  /// Validates every structural invariant; throws ValidationError / DanglingReferenceError.
  RoadGraph(std::vector<NodeRec> nodes, std::vector<SegmentRec> segments);

  const std::vector<NodeRec>& nodes() const { return nodes_; }
  const std::vector<SegmentRec>& segments() const { return segments_; }
  /// node_id -> counter_id
  const std::map<NodeId, std::string>& counters() const { return counters_; }

  std::optional<std::size_t> node_index(const NodeId& id) const;
  std::optional<std::size_t> segment_index(const SegmentId& id) const;
  bool has_counter(const NodeId& id) const { return counters_.contains(id); }

  bool operator==(const RoadGraph& other) const {
    return nodes_ == other.nodes_ && segments_ == other.segments_;
  }

 private:
  std::vector<NodeRec> nodes_;
  std::vector<SegmentRec> segments_;
  std::map<NodeId, std::string> counters_;
  std::unordered_map<NodeId, std::size_t> node_index_;
  std::unordered_map<SegmentId, std::size_t> segment_index_;
};

using VolumeVector = std::array<double, kVolumeBins>;

struct VolumeRecord {
  RecordId record_id;
  std::string day;  // YYYY-MM-DD
  int t_index = 0;  // 15-minute slot, 0..95
  std::map<NodeId, VolumeVector> volumes;  // absent counters are zero

  bool operator==(const VolumeRecord&) const = default;
};

struct SegmentLabel {
  std::optional<int> cc;  // 0 undefined, 1 green, 2 yellow, 3 red
  std::optional<double> speed_kph;
  std::optional<int> vol_class;  // 1, 3 or 5

  bool operator==(const SegmentLabel&) const = default;
};

struct LabelBundle {
  RecordId record_id;
  std::map<SegmentId, SegmentLabel> edges;

  bool operator==(const LabelBundle&) const = default;
};

struct SuperSegment {
  std::string ss_id;
  std::vector<SegmentId> path;
  std::map<RecordId, double> etas;  // seconds

  bool operator==(const SuperSegment&) const = default;
};

struct DatasetMeta {
  int format_version = kFormatVersion;
  std::string city_name = "synthetic";
  int num_day_slots = kDaySlots;

  bool operator==(const DatasetMeta&) const = default;
};

struct Dataset {
  DatasetMeta meta;
  RoadGraph graph;
  std::vector<VolumeRecord> records;
  std::vector<LabelBundle> labels;
  std::vector<SuperSegment> supersegments;

  bool operator==(const Dataset&) const = default;

  /// Label bundle for a record, or nullptr.
  const LabelBundle* labels_for(const RecordId& id) const;
};

/// Reads and validates a canonical dataset directory.
Dataset load_dataset(const std::filesystem::path& dir);

/// Writes the canonical layout; load_dataset(write_dataset(d)) == d.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Checks record/label/supersegment invariants against the graph. Throws on violation.
void validate_dataset(const Dataset& dataset);

/// Keeps records with start_slot <= t_index < end_slot, preserving order.
std::vector<VolumeRecord> daytime_filter(const std::vector<VolumeRecord>& records,
                                         int start_slot = kDaytimeStart,
                                         int end_slot = kDaytimeEnd);

struct Split {
  std::vector<VolumeRecord> train;
  std::vector<VolumeRecord> validation;
};

/// Day-level split: whole days are shuffled with the seed and assigned to one side.
Split split_train_validation(const std::vector<VolumeRecord>& records, double fraction,
                             std::uint64_t seed);

/// Median of each continuous attribute over segments where it was present; used for imputation.
std::array<double, kNumContinuous> continuous_medians(const std::vector<SegmentRec>& segments);

}  // namespace t4c
