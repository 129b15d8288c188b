#include "t4c/segment_graph.hpp"

#include <algorithm>
#include <cmath>

#include "t4c/error.hpp"

namespace t4c {

SegmentGraph build_line_graph(const RoadGraph& graph) {
  SegmentGraph g;
  const auto& segs = graph.segments();
  g.num_segments = segs.size();
  g.adjacency.assign(segs.size(), {});
  std::vector<std::vector<std::size_t>> incident(graph.nodes().size());
  for (std::size_t i = 0; i < segs.size(); ++i) {
    g.ids.push_back(segs[i].segment_id);
    g.index.emplace(segs[i].segment_id, i);
    const auto t = *graph.node_index(segs[i].tail_node);
    const auto h = *graph.node_index(segs[i].head_node);
    incident[t].push_back(i);
    if (h != t) incident[h].push_back(i);
  }
  for (const auto& list : incident) {
    for (auto a : list) {
      for (auto b : list) {
        if (a != b) g.adjacency[a].push_back(b);
      }
    }
  }
  for (auto& nbrs : g.adjacency) {
    std::sort(nbrs.begin(), nbrs.end());
    nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
  }
  return g;
}

nd::Adjacency node_adjacency(const RoadGraph& graph) {
  nd::Adjacency adj(graph.nodes().size());
  for (const auto& s : graph.segments()) {
    const auto t = *graph.node_index(s.tail_node);
    const auto h = *graph.node_index(s.head_node);
    if (t == h) continue;
    adj[t].push_back(h);
    adj[h].push_back(t);
  }
  for (auto& nbrs : adj) {
    std::sort(nbrs.begin(), nbrs.end());
    nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
  }
  return adj;
}

std::string to_string(PriorMode mode) { return mode == PriorMode::kFull ? "full" : "active_row"; }

PriorMode parse_prior_mode(const std::string& s) {
  if (s == "full") return PriorMode::kFull;
  if (s == "active_row") return PriorMode::kActiveRow;
  throw ValidationError("prior_mode must be 'full' or 'active_row', got '" + s + "'");
}

std::array<double, kCounterSlice> counter_slice(const RoadGraph&, const SegmentRec& segment,
                                                const VolumeRecord& record) {
  std::array<double, kCounterSlice> out{};
  if (const auto it = record.volumes.find(segment.tail_node); it != record.volumes.end()) {
    std::copy(it->second.begin(), it->second.end(), out.begin());
  }
  if (const auto it = record.volumes.find(segment.head_node); it != record.volumes.end()) {
    std::copy(it->second.begin(), it->second.end(), out.begin() + kVolumeBins);
  }
  return out;
}

namespace {

template <std::size_t N>
void finish_stats(const std::array<double, N>& sum, const std::array<double, N>& sq, double n,
                  std::array<double, N>& mean, std::array<double, N>& stddev) {
  for (std::size_t i = 0; i < N; ++i) {
    mean[i] = sum[i] / n;
    const double var = std::max(0.0, sq[i] / n - mean[i] * mean[i]);
    stddev[i] = std::max(kStdFloor, std::sqrt(var));
  }
}

}  // namespace

NormStats fit_normalization(const RoadGraph& graph, const std::vector<VolumeRecord>& train_records) {
  if (train_records.empty()) throw ValidationError("fit_normalization: empty training set");
  NormStats st;
  const auto& segs = graph.segments();
  if (segs.empty()) throw ValidationError("fit_normalization: graph has no segments");

  // Two-pass mean/variance for accuracy.
  std::array<double, kNumContinuous> sum{}, sq{};
  for (const auto& s : segs) {
    const auto c = s.continuous();
    for (std::size_t i = 0; i < kNumContinuous; ++i) sum[i] += c[i];
  }
  const double n_seg = static_cast<double>(segs.size());
  for (std::size_t i = 0; i < kNumContinuous; ++i) st.cont_mean[i] = sum[i] / n_seg;
  for (const auto& s : segs) {
    const auto c = s.continuous();
    for (std::size_t i = 0; i < kNumContinuous; ++i) sq[i] += (c[i] - st.cont_mean[i]) * (c[i] - st.cont_mean[i]);
  }
  for (std::size_t i = 0; i < kNumContinuous; ++i) st.cont_std[i] = std::max(kStdFloor, std::sqrt(sq[i] / n_seg));

  // Counter slices over (record, segment) pairs. Records are visited in id order so the
  // result does not depend on input order.
  std::vector<const VolumeRecord*> ordered;
  for (const auto& r : train_records) ordered.push_back(&r);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->record_id < b->record_id; });
  std::array<double, kCounterSlice> csum{}, csq{};
  for (const auto* r : ordered) {
    for (const auto& s : segs) {
      const auto slice = counter_slice(graph, s, *r);
      for (std::size_t i = 0; i < kCounterSlice; ++i) {
        csum[i] += slice[i];
        csq[i] += slice[i] * slice[i];
      }
    }
  }
  const double n_pairs = static_cast<double>(ordered.size()) * n_seg;
  finish_stats(csum, csq, n_pairs, st.counter_mean, st.counter_std);

  double vsum = 0.0, vsq = 0.0;
  for (const auto* r : ordered) {
    const double lv = std::log1p(volume_sum(*r));
    vsum += lv;
    vsq += lv * lv;
  }
  const double nr = static_cast<double>(ordered.size());
  st.log_volume_mean = vsum / nr;
  st.log_volume_std = std::max(kStdFloor, std::sqrt(std::max(0.0, vsq / nr - st.log_volume_mean * st.log_volume_mean)));
  return st;
}

void fit_speed_normalization(NormStats& st, const std::vector<LabelBundle>& labels) {
  std::vector<const LabelBundle*> ordered;
  for (const auto& b : labels) ordered.push_back(&b);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->record_id < b->record_id; });
  double sum = 0.0, n = 0.0;
  for (const auto* b : ordered) {
    for (const auto& [seg, l] : b->edges) {
      if (l.speed_kph) {
        sum += *l.speed_kph;
        n += 1.0;
      }
    }
  }
  if (n == 0.0) {
    st.speed_mean = 0.0;
    st.speed_std = 1.0;
    return;
  }
  st.speed_mean = sum / n;
  double sq = 0.0;
  for (const auto* b : ordered) {
    for (const auto& [seg, l] : b->edges) {
      if (l.speed_kph) sq += (*l.speed_kph - st.speed_mean) * (*l.speed_kph - st.speed_mean);
    }
  }
  st.speed_std = std::max(kStdFloor, std::sqrt(sq / n));
}

FeatureBundle assemble_features(const RoadGraph& graph, const SegmentGraph& seg_graph, const VolumeRecord& record,
                                const PriorSet& priors, const NormStats& norm, const ClusterModel& clusters,
                                PriorMode mode) {
  const auto& segs = graph.segments();
  const std::size_t n = segs.size();
  if (seg_graph.num_segments != n) throw ValidationError("assemble_features: segment graph does not match road graph");
  const auto k = static_cast<std::size_t>(clusters.num_clusters);
  FeatureBundle fb;
  fb.num_segments = n;
  fb.num_clusters = clusters.num_clusters;
  fb.cluster = assign_cluster(clusters, record);
  for (auto& c : fb.categorical) c.resize(n);
  fb.continuous = nd::Tensor::zeros({n, kNumContinuous});
  fb.counter_raw = nd::Tensor::zeros({n, kCounterSlice});
  fb.counter = nd::Tensor::zeros({n, kCounterSlice});
  const std::size_t prior_width = mode == PriorMode::kFull ? 3 * k : 3;
  fb.prior = nd::Tensor::zeros({n, prior_width});
  fb.global = nd::Tensor::zeros({n, k + 1});
  const double log_vs = (std::log1p(volume_sum(record)) - norm.log_volume_mean) / norm.log_volume_std;

  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = segs[i];
    fb.categorical[0][i] = s.importance;
    fb.categorical[1][i] = s.oneway;
    fb.categorical[2][i] = s.tunnel;
    fb.categorical[3][i] = s.lanes - 1;
    const auto cont = s.continuous();
    for (std::size_t j = 0; j < kNumContinuous; ++j) {
      fb.continuous.at(i, j) = (cont[j] - norm.cont_mean[j]) / norm.cont_std[j];
    }
    const auto slice = counter_slice(graph, s, record);
    for (std::size_t j = 0; j < kCounterSlice; ++j) {
      fb.counter_raw.at(i, j) = slice[j];
      fb.counter.at(i, j) = (slice[j] - norm.counter_mean[j]) / norm.counter_std[j];
    }
    const auto it = priors.find(s.segment_id);
    if (it == priors.end()) throw ValidationError("assemble_features: missing prior for segment \"" + s.segment_id + "\"");
    const auto& rows = it->second.rows;
    if (rows.size() != k) throw ValidationError("assemble_features: prior for \"" + s.segment_id + "\" has wrong K");
    if (mode == PriorMode::kFull) {
      for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t j = 0; j < 3; ++j) fb.prior.at(i, 3 * c + j) = rows[c][j];
      }
    } else {
      for (std::size_t j = 0; j < 3; ++j) fb.prior.at(i, j) = rows[static_cast<std::size_t>(fb.cluster)][j];
    }
    fb.global.at(i, static_cast<std::size_t>(fb.cluster)) = 1.0;
    fb.global.at(i, k) = log_vs;
  }
  return fb;
}

}  // namespace t4c
