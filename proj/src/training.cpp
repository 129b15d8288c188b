#include "t4c/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>
#include <unordered_map>

#include "t4c/rng.hpp"
#include "t4c/text.hpp"

namespace t4c {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
  if (batch < 1) throw ValidationError("train config: batch must be >= 1");
  if (ensemble < 1) throw ValidationError("train config: ensemble size must be >= 1");
  if (!(lr > 0.0)) throw ValidationError("train config: lr must be > 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train config: train_fraction in (0,1)");
  if (day_start < 0 || day_start >= day_end || day_end > kDaySlots) {
    throw ValidationError("train config: invalid daytime window");
  }
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},         {"batch", c.batch},
              {"lr", c.lr},                 {"seed", c.seed},
              {"ensemble", c.ensemble},     {"day_start", c.day_start},
              {"day_end", c.day_end},       {"train_fraction", c.train_fraction},
              {"split_seed", c.split_seed}};
}

Split prepare_split(const Dataset& dataset, const TrainConfig& cfg) {
  return split_train_validation(daytime_filter(dataset.records, cfg.day_start, cfg.day_end), cfg.train_fraction,
                                cfg.split_seed);
}

PreparedData prepare_data(const Dataset& dataset, const ClusterArtifact& clusters, const TrainConfig& cfg,
                          const ModelConfig& model_cfg) {
  cfg.validate();
  model_cfg.validate();
  if (clusters.model.num_clusters != model_cfg.num_clusters) {
    throw ValidationError("cluster model has K=" + std::to_string(clusters.model.num_clusters) +
                          " but model config expects K=" + std::to_string(model_cfg.num_clusters));
  }
  PreparedData d;
  d.seg_graph = build_line_graph(dataset.graph);
  const Split split = prepare_split(dataset, cfg);
  if (split.train.empty()) throw ValidationError("no training records inside the daytime window");

  std::unordered_map<RecordId, const VolumeRecord*> by_id;
  for (const auto& r : dataset.records) by_id.emplace(r.record_id, &r);
  std::unordered_map<RecordId, const LabelBundle*> labels;
  for (const auto& b : dataset.labels) labels.emplace(b.record_id, &b);
  auto label_of = [&](const RecordId& id) -> const LabelBundle* {
    const auto it = labels.find(id);
    return it == labels.end() ? nullptr : it->second;
  };

  for (const auto& r : split.train) d.train.push_back(by_id.at(r.record_id));
  for (const auto& r : split.validation) d.validation.push_back(by_id.at(r.record_id));

  d.norm = fit_normalization(dataset.graph, split.train);
  std::vector<LabelBundle> train_labels;
  for (const auto* r : d.train) {
    if (const auto* b = label_of(r->record_id)) train_labels.push_back(*b);
  }
  fit_speed_normalization(d.norm, train_labels);

  for (const auto* r : d.train) {
    d.train_features.push_back(assemble_features(dataset.graph, d.seg_graph, *r, clusters.priors, d.norm,
                                                 clusters.model, model_cfg.prior_mode));
    d.train_targets.push_back(make_targets(d.seg_graph, label_of(r->record_id), d.norm, model_cfg.cc_head));
  }
  for (const auto* r : d.validation) {
    d.val_features.push_back(assemble_features(dataset.graph, d.seg_graph, *r, clusters.priors, d.norm,
                                               clusters.model, model_cfg.prior_mode));
    d.val_labels.push_back(label_of(r->record_id));
  }
  d.weights = fit_class_weights(d.train_targets, model_cfg.cc_head);
  return d;
}

json to_json(const RunLog& log) {
  json epochs = json::array();
  for (const auto& e : log.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"loss", e.loss},
                      {"loss_c", e.loss_c},
                      {"loss_s", e.loss_s},
                      {"loss_v", e.loss_v},
                      {"val_core", e.val_core},
                      {"order_hash", e.order_hash}});
  }
  return json{{"seed", log.seed},
              {"best_epoch", log.best_epoch},
              {"first_step_loss", log.first_step_loss},
              {"epochs", epochs}};
}

RunLog run_log_from_json(const json& j) {
  RunLog log;
  try {
    log.seed = j.at("seed").get<std::uint64_t>();
    log.best_epoch = j.at("best_epoch").get<int>();
    log.first_step_loss = j.at("first_step_loss").get<double>();
    for (const auto& e : j.at("epochs")) {
      EpochLog el;
      el.epoch = e.at("epoch").get<int>();
      el.loss = e.at("loss").get<double>();
      el.loss_c = e.at("loss_c").get<double>();
      el.loss_s = e.at("loss_s").get<double>();
      el.loss_v = e.at("loss_v").get<double>();
      el.val_core = e.at("val_core").get<double>();
      el.order_hash = e.at("order_hash").get<std::string>();
      log.epochs.push_back(std::move(el));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("run log: ") + e.what());
  }
  return log;
}

void accumulate_and_step(Objective& objective, std::span<const std::size_t> indices, const nd::AdamConfig& adam,
                         LossReport* mean_report) {
  auto& params = objective.params();
  params.zero_grad();
  const double inv = 1.0 / static_cast<double>(indices.size());
  LossReport mean;
  for (auto i : indices) {
    auto terms = objective.train_loss(i);
    if (!std::isfinite(terms.report.L)) {
      throw TrainingDiverged("non-finite loss on training record " + std::to_string(i), {});
    }
    nd::backward(nd::scale(terms.total, inv));
    mean.L += terms.report.L * inv;
    mean.L_c += terms.report.L_c * inv;
    mean.L_s += terms.report.L_s * inv;
    mean.L_v += terms.report.L_v * inv;
    mean.n_c += terms.report.n_c;
    mean.n_s += terms.report.n_s;
    mean.n_v += terms.report.n_v;
  }
  nd::adam_step(params, adam);
  if (mean_report) *mean_report = mean;
}

LoopResult run_training(Objective& objective, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = objective.num_train();
  if (n == 0) throw ValidationError("training set is empty");
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  nd::AdamConfig adam;
  adam.lr = cfg.lr;
  LoopResult result;
  result.log.seed = seed;
  double best = std::numeric_limits<double>::infinity();
  bool first = true;
  const auto batch = static_cast<std::size_t>(cfg.batch);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    std::uint64_t h = text::fnv1a("");
    for (auto i : order) h = text::fnv1a(std::to_string(i) + ",", h);

    EpochLog el;
    el.epoch = epoch;
    el.order_hash = text::hex64(h);
    std::size_t steps = 0;
    for (std::size_t b = 0; b < n; b += batch) {
      const auto count = std::min(batch, n - b);
      LossReport rep;
      try {
        accumulate_and_step(objective, std::span<const std::size_t>(order.data() + b, count), adam, &rep);
      } catch (const TrainingDiverged& e) {
        throw TrainingDiverged(std::string(e.what()) + " in epoch " + std::to_string(epoch) + "; last finite epoch " +
                                   std::to_string(epoch - 1),
                               result.log);
      }
      if (first) {
        result.log.first_step_loss = rep.L;
        first = false;
      }
      el.loss += rep.L;
      el.loss_c += rep.L_c;
      el.loss_s += rep.L_s;
      el.loss_v += rep.L_v;
      ++steps;
    }
    const double inv = 1.0 / static_cast<double>(steps);
    el.loss *= inv;
    el.loss_c *= inv;
    el.loss_s *= inv;
    el.loss_v *= inv;
    el.val_core = objective.validation_core();
    el.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (const auto& e : objective.params().entries()) {
      for (double v : e.param.value().values) {
        if (!std::isfinite(v)) {
          throw TrainingDiverged("non-finite parameter after epoch " + std::to_string(epoch), result.log);
        }
      }
    }
    result.log.epochs.push_back(el);
    if (el.val_core < best || result.log.best_epoch == 0) {
      best = el.val_core;
      result.log.best_epoch = epoch;
      result.best = objective.params().clone();
    }
  }
  return result;
}

CoreScore evaluate_core(const TrafficModel& model, const PreparedData& data) {
  CoreScore total;
  for (std::size_t i = 0; i < data.validation.size(); ++i) {
    if (!data.val_labels[i]) continue;
    const auto probs = predict_probabilities(model.predict(data.seg_graph, data.val_features[i]), data.norm);
    total.merge(data.validation[i]->record_id, core_metric(probs.cc, *data.val_labels[i], data.seg_graph));
  }
  return total;
}

namespace {

class ModelObjective final : public Objective {
 public:
  ModelObjective(TrafficModel& model, const PreparedData& data) : model_(model), data_(data) {}

  nd::ParamStore& params() override { return model_.params(); }
  std::size_t num_train() const override { return data_.train.size(); }
  LossTerms train_loss(std::size_t i) override {
    const auto out = model_.forward(data_.seg_graph, data_.train_features[i]);
    return compute_loss(out, data_.train_targets[i], data_.weights, model_.config().lambda);
  }
  double validation_core() override {
    const auto s = evaluate_core(model_, data_);
    return s.defined() ? s.score() : std::numeric_limits<double>::infinity();
  }

 private:
  TrafficModel& model_;
  const PreparedData& data_;
};

}  // namespace

TrainResult train_one(const TrainConfig& cfg, const ModelConfig& model_cfg, const PreparedData& data,
                      std::uint64_t seed) {
  ModelConfig mc = model_cfg;
  mc.seed = seed;
  TrafficModel model(mc);
  ModelObjective objective(model, data);
  auto loop = run_training(objective, cfg, seed);
  TrainResult r;
  r.log = std::move(loop.log);
  r.checkpoint.config = mc;
  r.checkpoint.norm = data.norm;
  r.checkpoint.params = std::move(loop.best);
  return r;
}

unsigned thread_budget() {
  if (const char* env = std::getenv("T4C_THREADS")) {
    const auto v = text::parse_int(env);
    if (v && *v >= 1) return static_cast<unsigned>(*v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<TrainResult> train_ensemble(const TrainConfig& cfg, const ModelConfig& model_cfg, const PreparedData& data,
                                        unsigned threads) {
  cfg.validate();
  const auto members = static_cast<std::size_t>(cfg.ensemble);
  std::vector<std::optional<TrainResult>> slots(members);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t k = next++; k < members; k = next++) {
      try {
        slots[k] = train_one(cfg, model_cfg, data, cfg.seed + k);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(members)));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  std::vector<TrainResult> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

SegmentProbabilities average_probabilities(const std::vector<SegmentProbabilities>& members) {
  if (members.empty()) throw ValidationError("ensemble needs at least one member");
  SegmentProbabilities avg = members.front();
  const std::size_t n = avg.cc.size();
  for (std::size_t m = 1; m < members.size(); ++m) {
    if (members[m].cc.size() != n) throw ValidationError("ensemble members disagree on segment count");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        avg.cc[i][j] += members[m].cc[i][j];
        avg.vol[i][j] += members[m].vol[i][j];
      }
      avg.speed_kph[i] += members[m].speed_kph[i];
    }
  }
  if (members.size() == 1) return avg;
  const double count = static_cast<double>(members.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      avg.cc[i][j] /= count;
      avg.vol[i][j] /= count;
    }
    avg.speed_kph[i] /= count;
  }
  return avg;
}

SegmentProbabilities ensemble_predict(const std::vector<const Checkpoint*>& members, const Dataset& dataset,
                                      const SegmentGraph& seg_graph, const ClusterArtifact& clusters,
                                      const VolumeRecord& record) {
  if (members.empty()) throw ValidationError("ensemble needs at least one checkpoint");
  const auto hash = config_hash(members.front()->config);
  std::vector<SegmentProbabilities> probs;
  for (const auto* ck : members) {
    if (config_hash(ck->config) != hash) {
      throw ValidationError("ensemble members have mismatching config hashes (" + hash + " vs " +
                            config_hash(ck->config) + ")");
    }
    const TrafficModel model(ck->config, ck->params.clone());
    const auto features = assemble_features(dataset.graph, seg_graph, record, clusters.priors, ck->norm,
                                            clusters.model, ck->config.prior_mode);
    probs.push_back(predict_probabilities(model.predict(seg_graph, features), ck->norm));
  }
  return average_probabilities(probs);
}

}  // namespace t4c
