#include "t4c/clustering.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

#include "t4c/error.hpp"
#include "t4c/text.hpp"

namespace t4c {

using json = nlohmann::json;

double volume_sum(const VolumeRecord& record) {
  double total = 0.0;
  for (const auto& [node, v] : record.volumes) {
    for (double b : v) total += b;
  }
  return total;
}

ClusterModel fit_clusters(const std::vector<VolumeRecord>& records, int num_clusters) {
  if (num_clusters < 1) throw ValidationError("number of clusters must be >= 1");
  const std::size_t n = records.size();
  const auto k = static_cast<std::size_t>(num_clusters);
  if (n < k) {
    throw ValidationError("fit_clusters: " + std::to_string(n) + " records is fewer than " + std::to_string(k) +
                          " clusters");
  }
  struct Key {
    double sum;
    const RecordId* id;
  };
  std::vector<Key> keys;
  keys.reserve(n);
  for (const auto& r : records) keys.push_back({volume_sum(r), &r.record_id});
  std::stable_sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    if (a.sum != b.sum) return a.sum < b.sum;
    return *a.id < *b.id;
  });
  ClusterModel model;
  model.num_clusters = num_clusters;
  model.thresholds.assign(k - 1, 0.0);
  int previous = -1;
  for (std::size_t r = 0; r < n; ++r) {
    const int c = static_cast<int>(r * k / n);
    if (c != previous && c > 0) model.thresholds[static_cast<std::size_t>(c - 1)] = keys[r].sum;
    previous = c;
    if (!model.assignment.emplace(*keys[r].id, c).second) {
      throw ValidationError("fit_clusters: duplicate record id \"" + *keys[r].id + "\"");
    }
  }
  return model;
}

int assign_cluster(const ClusterModel& model, double vs) {
  const auto it = std::upper_bound(model.thresholds.begin(), model.thresholds.end(), vs);
  return static_cast<int>(it - model.thresholds.begin());
}

int assign_cluster(const ClusterModel& model, const VolumeRecord& record) {
  return assign_cluster(model, volume_sum(record));
}

int congestion_bucket(int cc) {
  if (cc == 0 || cc == 1) return 0;
  if (cc == 2) return 1;
  if (cc == 3) return 2;
  throw ValidationError("congestion class must be in 0..3, got " + std::to_string(cc));
}

PriorSet build_prior_matrices(const ClusterModel& model, const std::vector<LabelBundle>& labels, const RoadGraph& graph) {
  const auto k = static_cast<std::size_t>(model.num_clusters);
  const std::size_t n_seg = graph.segments().size();
  std::vector<std::vector<std::array<int, 3>>> counts(n_seg, std::vector<std::array<int, 3>>(k, {0, 0, 0}));
  for (const auto& bundle : labels) {
    const auto it = model.assignment.find(bundle.record_id);
    if (it == model.assignment.end()) continue;
    const auto cluster = static_cast<std::size_t>(it->second);
    for (const auto& [seg, label] : bundle.edges) {
      if (!label.cc) continue;
      const auto idx = graph.segment_index(seg);
      if (!idx) throw DanglingReferenceError("labels", "segment", seg);
      ++counts[*idx][cluster][static_cast<std::size_t>(congestion_bucket(*label.cc))];
    }
  }
  PriorSet out;
  for (std::size_t s = 0; s < n_seg; ++s) {
    PriorMatrix pm;
    pm.segment_id = graph.segments()[s].segment_id;
    pm.rows.resize(k);
    pm.support.resize(k);
    std::array<int, 3> total{0, 0, 0};
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t j = 0; j < 3; ++j) total[j] += counts[s][c][j];
    }
    const int total_n = total[0] + total[1] + total[2];
    CongestionDistribution fallback{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    if (total_n > 0) {
      for (std::size_t j = 0; j < 3; ++j) fallback[j] = static_cast<double>(total[j]) / total_n;
    }
    for (std::size_t c = 0; c < k; ++c) {
      const auto& cnt = counts[s][c];
      const int n = cnt[0] + cnt[1] + cnt[2];
      pm.support[c] = n;
      if (n == 0) {
        pm.rows[c] = fallback;
      } else {
        for (std::size_t j = 0; j < 3; ++j) pm.rows[c][j] = static_cast<double>(cnt[j]) / n;
      }
    }
    out.emplace(pm.segment_id, std::move(pm));
  }
  return out;
}

void write_cluster_model(const ClusterArtifact& a, const std::filesystem::path& path) {
  json priors = json::object();
  json support = json::object();
  for (const auto& [seg, pm] : a.priors) {
    json rows = json::array();
    for (const auto& r : pm.rows) rows.push_back({r[0], r[1], r[2]});
    priors[seg] = rows;
    support[seg] = pm.support;
  }
  json assignment = json::object();
  for (const auto& [rid, c] : a.model.assignment) assignment[rid] = c;
  json j = {{"K", a.model.num_clusters},
            {"thresholds", a.model.thresholds},
            {"priors", priors},
            {"support", support},
            {"assignment", assignment}};
  text::write_file(path, j.dump() + "\n");
}

ClusterArtifact read_cluster_model(const std::filesystem::path& path) {
  const std::string file = path.filename().string();
  json j;
  try {
    j = json::parse(text::read_file(path));
  } catch (const json::parse_error& e) {
    throw SchemaError(file, 1, "<document>", e.what());
  }
  ClusterArtifact a;
  try {
    a.model.num_clusters = j.at("K").get<int>();
    a.model.thresholds = j.at("thresholds").get<std::vector<double>>();
    if (j.contains("assignment")) a.model.assignment = j.at("assignment").get<std::map<RecordId, int>>();
    const auto k = static_cast<std::size_t>(a.model.num_clusters);
    if (a.model.num_clusters < 1 || a.model.thresholds.size() != k - 1) {
      throw SchemaError(file, 1, "thresholds", "expected K-1 thresholds");
    }
    if (!std::is_sorted(a.model.thresholds.begin(), a.model.thresholds.end())) {
      throw SchemaError(file, 1, "thresholds", "must be non-decreasing");
    }
    for (const auto& [seg, rows] : j.at("priors").items()) {
      PriorMatrix pm;
      pm.segment_id = seg;
      for (const auto& r : rows) pm.rows.push_back(r.get<CongestionDistribution>());
      if (pm.rows.size() != k) throw SchemaError(file, 1, "priors." + seg, "expected K rows");
      if (j.contains("support") && j.at("support").contains(seg)) {
        pm.support = j.at("support").at(seg).get<std::vector<int>>();
      } else {
        pm.support.assign(k, 0);
      }
      a.priors.emplace(seg, std::move(pm));
    }
  } catch (const json::exception& e) {
    throw SchemaError(file, 1, "<document>", e.what());
  }
  return a;
}

}  // namespace t4c
