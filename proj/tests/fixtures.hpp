#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "t4c/clustering.hpp"
#include "t4c/dataset.hpp"
#include "t4c/rng.hpp"

namespace fixtures {

inline t4c::SegmentRec segment(const std::string& id, const std::string& tail, const std::string& head) {
  t4c::SegmentRec s;
  s.segment_id = id;
  s.tail_node = tail;
  s.head_node = head;
  s.importance = 2;
  s.lanes = 2;
  s.parsed_maxspeed = 50;
  s.flow_speed = 40;
  s.length_meters = 100;
  s.counter_distance = 1;
  s.limit_speed = 50;
  return s;
}

/// Graph from (tail, head) pairs; nodes are created on demand, counters on `counter_nodes`.
inline t4c::RoadGraph graph(const std::vector<std::pair<std::string, std::string>>& edges,
                            const std::vector<std::string>& counter_nodes = {}) {
  std::vector<t4c::NodeRec> nodes;
  auto ensure = [&](const std::string& n) {
    for (const auto& x : nodes) {
      if (x.node_id == n) return;
    }
    t4c::NodeRec r;
    r.node_id = n;
    r.lat = 51.0 + 0.01 * static_cast<double>(nodes.size());
    r.lon = -0.1;
    for (const auto& c : counter_nodes) {
      if (c == n) r.counter_id = "c_" + n;
    }
    nodes.push_back(r);
  };
  std::vector<t4c::SegmentRec> segs;
  int i = 0;
  for (const auto& [t, h] : edges) {
    ensure(t);
    ensure(h);
    auto s = segment("e" + std::to_string(i++), t, h);
    s.importance = i % 6;
    s.oneway = i % 2;
    s.lanes = 1 + i % 4;
    s.flow_speed = 30 + 3 * i;
    s.length_meters = 80 + 17 * i;
    segs.push_back(s);
  }
  return t4c::RoadGraph(nodes, segs);
}

/// Random sparse graph with `n_nodes` nodes and up to `n_edges` distinct directed edges.
inline std::vector<std::pair<std::string, std::string>> random_edges(t4c::Rng& rng, int n_nodes, int n_edges) {
  std::vector<std::pair<std::string, std::string>> out;
  for (int k = 0; k < n_edges; ++k) {
    const auto a = rng.below(static_cast<std::uint64_t>(n_nodes));
    auto b = rng.below(static_cast<std::uint64_t>(n_nodes));
    if (a == b) b = (b + 1) % static_cast<std::uint64_t>(n_nodes);
    out.emplace_back("n" + std::to_string(a), "n" + std::to_string(b));
  }
  return out;
}

inline t4c::VolumeRecord record(const std::string& id, std::map<std::string, t4c::VolumeVector> volumes,
                                int t_index = 40, const std::string& day = "2021-06-01") {
  t4c::VolumeRecord r;
  r.record_id = id;
  r.day = day;
  r.t_index = t_index;
  r.volumes = std::move(volumes);
  return r;
}

/// Records with a single counter whose volumeSum is `sum` (spread over bin 0).
inline t4c::VolumeRecord record_with_sum(const std::string& id, double sum, const std::string& node = "A") {
  return record(id, {{node, {sum, 0, 0, 0}}});
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("t4c_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
