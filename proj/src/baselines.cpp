#include "t4c/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "t4c/error.hpp"

namespace t4c {

using json = nlohmann::json;

double lower_median(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median of an empty sample");
  std::sort(values.begin(), values.end());
  return values[(values.size() - 1) / 2];
}

namespace {

using Counts = std::array<long, 3>;

CongestionDistribution normalise(const Counts& c) {
  const long n = c[0] + c[1] + c[2];
  if (n == 0) return {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  CongestionDistribution d;
  for (std::size_t j = 0; j < 3; ++j) d[j] = static_cast<double>(c[j]) / n;
  return d;
}

std::map<std::string, double> median_etas(const std::vector<SuperSegment>& supersegments,
                                          const std::set<RecordId>& records) {
  std::map<std::string, double> out;
  for (const auto& ss : supersegments) {
    std::vector<double> sample;
    for (const auto& [rid, eta] : ss.etas) {
      if (records.count(rid)) sample.push_back(eta);
    }
    if (!sample.empty()) out[ss.ss_id] = lower_median(std::move(sample));
  }
  return out;
}

json dist_json(const CongestionDistribution& d) { return json::array({d[0], d[1], d[2]}); }

CongestionDistribution dist_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw ValidationError("probability vector must have 3 entries");
  return {v[0], v[1], v[2]};
}

}  // namespace

CongestionDistribution NaiveCountModel::cc(const SegmentId& segment) const {
  if (global) return global_dist;
  const auto it = segments.find(segment);
  return it == segments.end() ? global_dist : it->second;
}

std::optional<double> NaiveCountModel::eta_for(const std::string& ss_id) const {
  const auto it = eta.find(ss_id);
  if (it == eta.end()) return std::nullopt;
  return it->second;
}

NaiveCountModel fit_naive(const std::vector<LabelBundle>& labels, const std::vector<SuperSegment>& supersegments,
                          const std::set<RecordId>& records, bool global) {
  NaiveCountModel m;
  m.global = global;
  std::map<SegmentId, Counts> per_segment;
  Counts all{0, 0, 0};
  std::size_t used = 0;
  for (const auto& bundle : labels) {
    if (!records.count(bundle.record_id)) continue;
    ++used;
    for (const auto& [seg, label] : bundle.edges) {
      if (!label.cc) continue;
      const auto b = static_cast<std::size_t>(congestion_bucket(*label.cc));
      ++per_segment[seg][b];
      ++all[b];
    }
  }
  if (used == 0) throw ValidationError("naive count baseline needs at least one labeled record");
  m.global_dist = normalise(all);
  if (!global) {
    for (const auto& [seg, c] : per_segment) m.segments[seg] = normalise(c);
  }
  m.eta = median_etas(supersegments, records);
  return m;
}

CongestionDistribution VolumeClusterModel::cc(int cluster, const SegmentId& segment) const {
  const auto it = priors.find(segment);
  if (it == priors.end()) return naive.cc(segment);
  const auto k = static_cast<std::size_t>(cluster);
  if (k >= it->second.rows.size()) throw ValidationError("cluster index out of range: " + std::to_string(cluster));
  if (it->second.support[k] == 0) return naive.cc(segment);
  return it->second.rows[k];
}

std::optional<double> VolumeClusterModel::eta_for(int cluster, const std::string& ss_id) const {
  const auto it = eta.find(ss_id);
  if (it != eta.end()) {
    const auto k = static_cast<std::size_t>(cluster);
    if (k < it->second.size() && it->second[k]) return it->second[k];
  }
  return naive.eta_for(ss_id);
}

VolumeClusterModel fit_volume_cluster(const ClusterModel& clusters, const std::vector<LabelBundle>& labels,
                                      const std::vector<SuperSegment>& supersegments, const RoadGraph& graph) {
  VolumeClusterModel m;
  m.clusters = clusters;
  std::set<RecordId> records;
  for (const auto& [rid, k] : clusters.assignment) records.insert(rid);
  m.naive = fit_naive(labels, supersegments, records);
  m.priors = build_prior_matrices(clusters, labels, graph);
  const auto k = static_cast<std::size_t>(clusters.num_clusters);
  for (const auto& ss : supersegments) {
    std::vector<std::vector<double>> samples(k);
    for (const auto& [rid, eta] : ss.etas) {
      const auto it = clusters.assignment.find(rid);
      if (it != clusters.assignment.end()) samples[static_cast<std::size_t>(it->second)].push_back(eta);
    }
    auto& row = m.eta[ss.ss_id];
    row.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
      if (!samples[c].empty()) row[c] = lower_median(std::move(samples[c]));
    }
  }
  return m;
}

json to_json(const NaiveCountModel& m) {
  json segs = json::object();
  for (const auto& [seg, d] : m.segments) segs[seg] = dist_json(d);
  return json{{"kind", "naive"}, {"global", m.global}, {"global_dist", dist_json(m.global_dist)},
              {"segments", segs}, {"eta", m.eta}};
}

NaiveCountModel naive_from_json(const json& j) {
  NaiveCountModel m;
  try {
    if (j.at("kind").get<std::string>() != "naive") throw ValidationError("baseline file is not a naive model");
    m.global = j.at("global").get<bool>();
    m.global_dist = dist_from(j.at("global_dist"));
    for (const auto& [seg, d] : j.at("segments").items()) m.segments[seg] = dist_from(d);
    m.eta = j.at("eta").get<std::map<std::string, double>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("naive baseline: ") + e.what());
  }
  return m;
}

json to_json(const VolumeClusterModel& m) {
  json priors = json::object();
  for (const auto& [seg, pm] : m.priors) {
    json rows = json::array();
    for (const auto& r : pm.rows) rows.push_back(dist_json(r));
    priors[seg] = {{"rows", rows}, {"support", pm.support}};
  }
  json eta = json::object();
  for (const auto& [ss, row] : m.eta) {
    json r = json::array();
    for (const auto& v : row) r.push_back(v ? json(*v) : json(nullptr));
    eta[ss] = r;
  }
  return json{{"kind", "volume_cluster"},
              {"K", m.clusters.num_clusters},
              {"thresholds", m.clusters.thresholds},
              {"assignment", m.clusters.assignment},
              {"priors", priors},
              {"eta", eta},
              {"naive", to_json(m.naive)}};
}

VolumeClusterModel volume_cluster_from_json(const json& j) {
  VolumeClusterModel m;
  try {
    if (j.at("kind").get<std::string>() != "volume_cluster") {
      throw ValidationError("baseline file is not a volume cluster model");
    }
    m.clusters.num_clusters = j.at("K").get<int>();
    m.clusters.thresholds = j.at("thresholds").get<std::vector<double>>();
    m.clusters.assignment = j.at("assignment").get<std::map<RecordId, int>>();
    for (const auto& [seg, p] : j.at("priors").items()) {
      PriorMatrix pm;
      pm.segment_id = seg;
      for (const auto& r : p.at("rows")) pm.rows.push_back(dist_from(r));
      pm.support = p.at("support").get<std::vector<int>>();
      m.priors.emplace(seg, std::move(pm));
    }
    for (const auto& [ss, row] : j.at("eta").items()) {
      auto& out = m.eta[ss];
      for (const auto& v : row) out.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    }
    m.naive = naive_from_json(j.at("naive"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("volume cluster baseline: ") + e.what());
  }
  return m;
}

// ---- node GNN ------------------------------------------------------------------------------

NodeNorm fit_node_norm(const RoadGraph& graph, const std::vector<const VolumeRecord*>& records) {
  NodeNorm n;
  std::array<double, 4> sum{0, 0, 0, 0}, sq{0, 0, 0, 0};
  std::size_t count = 0;
  for (const auto* r : records) {
    for (const auto& [node, cid] : graph.counters()) {
      (void)cid;
      const auto it = r->volumes.find(node);
      for (std::size_t b = 0; b < 4; ++b) {
        const double v = it == r->volumes.end() ? 0.0 : it->second[b];
        sum[b] += v;
        sq[b] += v * v;
      }
      ++count;
    }
  }
  if (count == 0) return n;
  for (std::size_t b = 0; b < 4; ++b) {
    n.mean[b] = sum[b] / static_cast<double>(count);
    const double var = sq[b] / static_cast<double>(count) - n.mean[b] * n.mean[b];
    n.std[b] = std::max(std::sqrt(std::max(var, 0.0)), 1e-6);
  }
  return n;
}

nd::Tensor node_features(const RoadGraph& graph, const VolumeRecord& record, const NodeNorm& norm) {
  auto t = nd::Tensor::zeros({graph.nodes().size(), kNodeFeatures});
  for (const auto& [node, cid] : graph.counters()) {
    (void)cid;
    const auto idx = *graph.node_index(node);
    const auto it = record.volumes.find(node);
    for (std::size_t b = 0; b < 4; ++b) {
      const double v = it == record.volumes.end() ? 0.0 : it->second[b];
      t.at(idx, b) = (v - norm.mean[b]) / norm.std[b];
    }
    t.at(idx, 4) = 1.0;
  }
  return t;
}

namespace {

std::vector<std::pair<std::string, nd::Shape>> node_gnn_layout(const NodeGnnConfig& c) {
  const auto h = static_cast<std::size_t>(c.hidden);
  std::vector<std::pair<std::string, nd::Shape>> specs;
  specs.push_back({"input.w", {kNodeFeatures, h}});
  specs.push_back({"input.b", {h}});
  for (int l = 0; l < c.layers; ++l) {
    const auto p = "gnn." + std::to_string(l);
    specs.push_back({p + ".w_self", {h, h}});
    specs.push_back({p + ".w_nbr", {h, h}});
    specs.push_back({p + ".b", {h}});
  }
  specs.push_back({"readout.w", {2 * h, 3}});
  specs.push_back({"readout.b", {3}});
  return specs;
}

void check_node_gnn_config(const NodeGnnConfig& c) {
  if (c.hidden < 1 || c.layers < 0) throw ValidationError("node GNN config: hidden >= 1 and layers >= 0 required");
}

}  // namespace

NodeGnnModel::NodeGnnModel(const RoadGraph& graph, NodeGnnConfig cfg) : cfg_(cfg) {
  check_node_gnn_config(cfg_);
  adjacency_ = node_adjacency(graph);
  for (const auto& s : graph.segments()) {
    tail_.push_back(static_cast<int>(*graph.node_index(s.tail_node)));
    head_.push_back(static_cast<int>(*graph.node_index(s.head_node)));
  }
  nd::Initializer init(cfg_.seed);
  for (const auto& [name, shape] : node_gnn_layout(cfg_)) {
    params_.add(name, shape.size() == 1 ? nd::Tensor::zeros(shape) : init.xavier(shape[0], shape[1]));
  }
}

NodeGnnModel::NodeGnnModel(const RoadGraph& graph, NodeGnnConfig cfg, nd::ParamStore params)
    : NodeGnnModel(graph, cfg) {
  for (const auto& [name, shape] : node_gnn_layout(cfg_)) {
    if (!params.contains(name) || params.get(name).shape() != shape) {
      throw ValidationError("node GNN parameters do not match the config at '" + name + "'");
    }
  }
  if (params.entries().size() != params_.entries().size()) {
    throw ValidationError("node GNN parameters contain unexpected tensors");
  }
  params_ = std::move(params);
}

nd::Var NodeGnnModel::forward(const nd::Tensor& features) const {
  auto p = [&](const std::string& n) { return params_.get(n); };
  nd::Var h = nd::relu(nd::linear(nd::constant(features), p("input.w"), p("input.b")));
  for (int l = 0; l < cfg_.layers; ++l) {
    const auto pre = "gnn." + std::to_string(l);
    const auto nbr = nd::mean_neighbor_aggregate(h, adjacency_);
    h = nd::relu(nd::add_bias(nd::add(nd::matmul(h, p(pre + ".w_self")), nd::matmul(nbr, p(pre + ".w_nbr"))),
                              p(pre + ".b")));
  }
  const auto edge = nd::concat_cols({nd::embedding_lookup(h, tail_), nd::embedding_lookup(h, head_)});
  return nd::linear(edge, p("readout.w"), p("readout.b"));
}

std::vector<CongestionDistribution> NodeGnnModel::predict(const nd::Tensor& features) const {
  const auto probs = nd::softmax_rows(forward(features)).value();
  std::vector<CongestionDistribution> out(probs.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < 3; ++j) out[i][j] = probs.at(i, j);
  }
  return out;
}

namespace {

class NodeGnnObjective final : public Objective {
 public:
  NodeGnnObjective(NodeGnnModel& model, const SegmentGraph& seg_graph, std::vector<nd::Tensor> train_x,
                   std::vector<std::vector<int>> train_y, std::vector<double> weights, std::vector<nd::Tensor> val_x,
                   std::vector<const LabelBundle*> val_labels, std::vector<RecordId> val_ids)
      : model_(model),
        seg_graph_(seg_graph),
        train_x_(std::move(train_x)),
        train_y_(std::move(train_y)),
        weights_(std::move(weights)),
        val_x_(std::move(val_x)),
        val_labels_(std::move(val_labels)),
        val_ids_(std::move(val_ids)) {}

  nd::ParamStore& params() override { return model_.params(); }
  std::size_t num_train() const override { return train_x_.size(); }
  LossTerms train_loss(std::size_t i) override {
    auto lc = nd::weighted_cross_entropy(model_.forward(train_x_[i]), train_y_[i], weights_);
    LossReport r;
    r.L_c = lc.loss.item();
    r.L = r.L_c;
    r.n_c = lc.count;
    return {lc.loss, r};
  }
  double validation_core() override {
    const auto s = score();
    return s.defined() ? s.score() : std::numeric_limits<double>::infinity();
  }
  CoreScore score() const {
    CoreScore total;
    for (std::size_t i = 0; i < val_x_.size(); ++i) {
      if (!val_labels_[i]) continue;
      total.merge(val_ids_[i], core_metric(model_.predict(val_x_[i]), *val_labels_[i], seg_graph_));
    }
    return total;
  }

 private:
  NodeGnnModel& model_;
  const SegmentGraph& seg_graph_;
  std::vector<nd::Tensor> train_x_;
  std::vector<std::vector<int>> train_y_;
  std::vector<double> weights_;
  std::vector<nd::Tensor> val_x_;
  std::vector<const LabelBundle*> val_labels_;
  std::vector<RecordId> val_ids_;
};

}  // namespace

NodeGnnResult node_gnn_baseline(const Dataset& dataset, const TrainConfig& cfg, const NodeGnnConfig& gnn_cfg) {
  cfg.validate();
  const auto seg_graph = build_line_graph(dataset.graph);
  const auto split = prepare_split(dataset, cfg);
  if (split.train.empty()) throw ValidationError("no training records inside the daytime window");
  std::map<RecordId, const LabelBundle*> labels;
  for (const auto& b : dataset.labels) labels[b.record_id] = &b;
  auto label_of = [&](const RecordId& id) -> const LabelBundle* {
    const auto it = labels.find(id);
    return it == labels.end() ? nullptr : it->second;
  };

  std::vector<const VolumeRecord*> train_ptrs;
  for (const auto& r : split.train) train_ptrs.push_back(&r);
  NodeGnnResult result;
  result.config = gnn_cfg;
  result.norm = fit_node_norm(dataset.graph, train_ptrs);

  NormStats dummy;
  std::vector<nd::Tensor> train_x, val_x;
  std::vector<std::vector<int>> train_y;
  std::vector<LabelTargets> targets;
  for (const auto& r : split.train) {
    train_x.push_back(node_features(dataset.graph, r, result.norm));
    targets.push_back(make_targets(seg_graph, label_of(r.record_id), dummy, 3));
    train_y.push_back(targets.back().cc);
  }
  std::vector<const LabelBundle*> val_labels;
  std::vector<RecordId> val_ids;
  for (const auto& r : split.validation) {
    val_x.push_back(node_features(dataset.graph, r, result.norm));
    val_labels.push_back(label_of(r.record_id));
    val_ids.push_back(r.record_id);
  }
  const auto weights = fit_class_weights(targets, 3);

  NodeGnnModel model(dataset.graph, gnn_cfg);
  NodeGnnObjective objective(model, seg_graph, std::move(train_x), std::move(train_y), weights.cc, std::move(val_x),
                             std::move(val_labels), std::move(val_ids));
  auto loop = run_training(objective, cfg, gnn_cfg.seed);
  model.params() = loop.best.clone();
  result.validation = objective.score();
  result.params = std::move(loop.best);
  result.log = std::move(loop.log);
  return result;
}

json to_json(const NodeGnnResult& r) {
  json params = json::object();
  for (const auto& e : r.params.entries()) {
    params[e.name] = {{"shape", e.param.value().shape}, {"values", e.param.value().values}};
  }
  return json{{"kind", "node_gnn"},
              {"hidden", r.config.hidden},
              {"layers", r.config.layers},
              {"seed", r.config.seed},
              {"norm_mean", r.norm.mean},
              {"norm_std", r.norm.std},
              {"params", params},
              {"runlog", to_json(r.log)},
              {"validation_core", r.validation.defined() ? json(r.validation.score()) : json(nullptr)},
              {"n_scored", r.validation.n_scored}};
}

NodeGnnResult node_gnn_from_json(const json& j) {
  NodeGnnResult r;
  try {
    if (j.at("kind").get<std::string>() != "node_gnn") throw ValidationError("baseline file is not a node GNN");
    r.config.hidden = j.at("hidden").get<int>();
    r.config.layers = j.at("layers").get<int>();
    r.config.seed = j.at("seed").get<std::uint64_t>();
    r.norm.mean = j.at("norm_mean").get<std::array<double, 4>>();
    r.norm.std = j.at("norm_std").get<std::array<double, 4>>();
    for (const auto& [name, p] : j.at("params").items()) {
      r.params.add(name, nd::Tensor(p.at("shape").get<nd::Shape>(), p.at("values").get<std::vector<double>>()));
    }
    r.log = run_log_from_json(j.at("runlog"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("node GNN baseline: ") + e.what());
  }
  return r;
}

}  // namespace t4c
