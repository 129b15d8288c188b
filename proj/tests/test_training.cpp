#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "fixtures.hpp"
#include "model_fixture.hpp"
#include "t4c/baselines.hpp"
#include "t4c/checkpoint.hpp"
#include "t4c/synth.hpp"
#include "t4c/training.hpp"

using namespace t4c;

namespace {

struct SmallCity {
  Dataset ds;
  ClusterArtifact clusters;
  TrainConfig cfg;
  ModelConfig mc;
};

SmallCity small_city(int records = 40) {
  SmallCity c;
  SynthSpec spec;
  spec.nodes = 16;
  spec.records = records;
  spec.records_per_day = 4;
  c.ds = synthesize_city(spec, 5);
  c.cfg.epochs = 2;
  c.cfg.ensemble = 1;
  const auto split = prepare_split(c.ds, c.cfg);
  c.clusters.model = fit_clusters(split.train, 4);
  c.clusters.priors = build_prior_matrices(c.clusters.model, c.ds.labels, c.ds.graph);
  c.mc.num_clusters = 4;
  c.mc.hidden = 16;
  c.mc.static_hidden = 8;
  c.mc.volume_hidden = {8, 8};
  return c;
}

class ScriptedObjective final : public Objective {
 public:
  explicit ScriptedObjective(int diverge_at_call) : diverge_at_(diverge_at_call) {
    w_ = store_.add("w", nd::Tensor({1, 1}, {1.0}));
  }
  nd::ParamStore& params() override { return store_; }
  std::size_t num_train() const override { return 4; }
  LossTerms train_loss(std::size_t) override {
    ++calls_;
    LossTerms t;
    const double bad = calls_ >= diverge_at_ ? std::numeric_limits<double>::quiet_NaN() : 1.0;
    t.total = nd::scale(w_, bad);
    t.report.L = t.total.item();
    return t;
  }
  double validation_core() override { return 1.0; }

 private:
  nd::ParamStore store_;
  nd::Var w_;
  int calls_ = 0;
  int diverge_at_;
};

}  // namespace

TEST_CASE("train config validation and defaults") {
  TrainConfig c;
  CHECK(c.epochs == 20);
  CHECK(c.batch == 2);
  CHECK(c.ensemble == 9);
  CHECK(c.lr == 1e-3);
  CHECK(c.day_start == 24);
  CHECK(c.day_end == 88);
  CHECK_NOTHROW(c.validate());
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = TrainConfig{};
  c.ensemble = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("identical seeds give identical logs and bitwise-equal checkpoints") {
  const auto c = small_city();
  const auto data = prepare_data(c.ds, c.clusters, c.cfg, c.mc);
  const auto a = train_one(c.cfg, c.mc, data, 3);
  const auto b = train_one(c.cfg, c.mc, data, 3);
  CHECK(a.log == b.log);
  CHECK(bitwise_equal(a.checkpoint, b.checkpoint));
  CHECK(to_json(a.log).dump() == to_json(b.log).dump());
  const auto other = train_one(c.cfg, c.mc, data, 4);
  CHECK_FALSE(bitwise_equal(a.checkpoint, other.checkpoint));
}

TEST_CASE("best epoch minimises the validation score") {
  auto c = small_city();
  c.cfg.epochs = 4;
  const auto data = prepare_data(c.ds, c.clusters, c.cfg, c.mc);
  const auto r = train_one(c.cfg, c.mc, data, 0);
  REQUIRE(r.log.epochs.size() == 4);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : r.log.epochs) best = std::min(best, e.val_core);
  CHECK(r.log.epochs[static_cast<std::size_t>(r.log.best_epoch - 1)].val_core == best);
  // The returned parameters are the ones scored at that epoch.
  const TrafficModel model(r.checkpoint.config, r.checkpoint.params.clone());
  CHECK(evaluate_core(model, data).score() == best);
  CHECK(run_log_from_json(to_json(r.log)) == r.log);
}

TEST_CASE("gradient accumulation equals the mean of individual gradients") {
  const auto c = small_city();
  const auto data = prepare_data(c.ds, c.clusters, c.cfg, c.mc);
  TrafficModel model(c.mc);
  const std::vector<std::size_t> idx{0, 1};

  // Individual gradients.
  std::vector<std::vector<nd::Tensor>> grads;
  for (auto i : idx) {
    model.params().zero_grad();
    nd::backward(compute_loss(model.forward(data.seg_graph, data.train_features[i]), data.train_targets[i],
                              data.weights, c.mc.lambda)
                     .total);
    std::vector<nd::Tensor> g;
    for (const auto& e : model.params().entries()) g.push_back(e.param.grad());
    grads.push_back(g);
  }
  // Manual step on a clone using the mean gradient.
  auto manual = model.params().clone();
  manual.zero_grad();
  for (std::size_t k = 0; k < manual.entries().size(); ++k) {
    auto& e = manual.entries()[k];
    auto& g = e.param.node()->ensure_grad();
    for (std::size_t j = 0; j < g.size(); ++j) g.values[j] = 0.5 * (grads[0][k].values[j] + grads[1][k].values[j]);
  }
  nd::AdamConfig adam;
  nd::adam_step(manual, adam);

  // Accumulated step.
  class Obj final : public Objective {
   public:
    Obj(TrafficModel& m, const PreparedData& d) : m_(m), d_(d) {}
    nd::ParamStore& params() override { return m_.params(); }
    std::size_t num_train() const override { return d_.train.size(); }
    LossTerms train_loss(std::size_t i) override {
      return compute_loss(m_.forward(d_.seg_graph, d_.train_features[i]), d_.train_targets[i], d_.weights,
                          m_.config().lambda);
    }
    double validation_core() override { return 0.0; }

   private:
    TrafficModel& m_;
    const PreparedData& d_;
  } obj(model, data);
  accumulate_and_step(obj, idx, adam);

  double worst = 0.0;
  for (std::size_t k = 0; k < manual.entries().size(); ++k) {
    const auto& a = manual.entries()[k].param.value().values;
    const auto& b = model.params().entries()[k].param.value().values;
    for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("one epoch lowers the training loss on a learnable fixture") {
  // 20 segments, a handful of records with fixed labels.
  std::vector<std::pair<std::string, std::string>> edges;
  for (int i = 0; i < 20; ++i) edges.emplace_back("n" + std::to_string(i), "n" + std::to_string((i + 1) % 20));
  auto toy = fixtures::toy_instance(edges, {"n0", "n10"}, 1, 2);
  Rng rng(6);
  PreparedData data;
  data.seg_graph = toy.seg_graph;
  data.norm = toy.norm;
  std::vector<LabelBundle> labels;
  for (int r = 0; r < 8; ++r) {
    labels.push_back(fixtures::random_labels(toy.graph, "r" + std::to_string(r), rng));
  }
  for (int r = 0; r < 8; ++r) {
    data.train.push_back(&toy.record);
    data.train_features.push_back(toy.features);
    data.train_targets.push_back(make_targets(toy.seg_graph, &labels[0], toy.norm));
  }
  data.weights = fit_class_weights(data.train_targets);
  ModelConfig mc;
  mc.num_clusters = 1;
  TrainConfig cfg;
  cfg.epochs = 1;
  TrafficModel model(mc);
  const auto before = compute_loss(model.forward(data.seg_graph, data.train_features[0]), data.train_targets[0],
                                   data.weights, mc.lambda)
                          .report.L;
  const auto r = train_one(cfg, mc, data, mc.seed);
  const TrafficModel trained(mc, r.checkpoint.params.clone());
  const auto after = compute_loss(trained.forward(data.seg_graph, data.train_features[0]), data.train_targets[0],
                                  data.weights, mc.lambda)
                         .report.L;
  CHECK(r.log.first_step_loss == doctest::Approx(before).epsilon(1e-12));
  CHECK(after < before);
}

TEST_CASE("overfits a 20-segment instance within 500 steps") {
  std::vector<std::pair<std::string, std::string>> edges;
  for (int i = 0; i < 20; ++i) edges.emplace_back("n" + std::to_string(i), "n" + std::to_string((i + 1) % 20));
  auto toy = fixtures::toy_instance(edges, {"n0", "n10"}, 1, 2);
  Rng rng(8);
  const auto labels = fixtures::random_labels(toy.graph, "r", rng);
  const auto targets = make_targets(toy.seg_graph, &labels, toy.norm);
  ModelConfig mc;
  mc.num_clusters = 1;
  TrafficModel model(mc);
  const auto weights = fit_class_weights({targets});
  nd::AdamConfig adam;
  double lc = 0.0;
  for (int step = 0; step < 500; ++step) {
    model.params().zero_grad();
    const auto loss = compute_loss(model.forward(toy.seg_graph, toy.features), targets, weights, mc.lambda);
    lc = loss.report.L_c;
    nd::backward(loss.total);
    nd::adam_step(model.params(), adam);
  }
  CHECK(lc < 0.05);
}

TEST_CASE("non-finite loss aborts with the last finite log") {
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch = 2;
  ScriptedObjective obj(9);  // 4 records per epoch: epochs 1 and 2 finish, epoch 3 diverges
  try {
    run_training(obj, cfg, 0);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.partial().epochs.size() == 2);
    CHECK(std::string(e.what()).find("epoch 3") != std::string::npos);
  }
}

TEST_CASE("trained model beats the naive baseline on the synthetic city") {
  SynthSpec spec;
  spec.records = 100;
  const auto ds = synthesize_city(spec, 1);
  TrainConfig cfg;
  cfg.epochs = 3;
  const auto split = prepare_split(ds, cfg);
  ClusterArtifact clusters;
  clusters.model = fit_clusters(split.train, 10);
  clusters.priors = build_prior_matrices(clusters.model, ds.labels, ds.graph);
  ModelConfig mc;
  mc.hidden = 32;
  const auto data = prepare_data(ds, clusters, cfg, mc);
  const auto r = train_one(cfg, mc, data, 0);
  const TrafficModel model(r.checkpoint.config, r.checkpoint.params.clone());
  const double model_score = evaluate_core(model, data).score();

  std::set<RecordId> train_ids;
  for (const auto& rec : split.train) train_ids.insert(rec.record_id);
  const auto naive = fit_naive(ds.labels, ds.supersegments, train_ids);
  CoreScore naive_score;
  for (std::size_t i = 0; i < data.validation.size(); ++i) {
    if (!data.val_labels[i]) continue;
    std::vector<std::array<double, 3>> p;
    for (const auto& id : data.seg_graph.ids) p.push_back(naive.cc(id));
    naive_score.merge(data.validation[i]->record_id, core_metric(p, *data.val_labels[i], data.seg_graph));
  }
  CHECK(model_score < naive_score.score());
}

TEST_CASE("ensembles") {
  auto c = small_city();
  c.cfg.epochs = 1;
  const auto data = prepare_data(c.ds, c.clusters, c.cfg, c.mc);

  SUBCASE("size one equals train_one") {
    const auto one = train_ensemble(c.cfg, c.mc, data, 1);
    REQUIRE(one.size() == 1);
    CHECK(bitwise_equal(one[0].checkpoint, train_one(c.cfg, c.mc, data, c.cfg.seed).checkpoint));
  }
  SUBCASE("members have distinct seeds and rerun exactly, in parallel or not") {
    c.cfg.ensemble = 3;
    c.cfg.seed = 10;
    const auto serial = train_ensemble(c.cfg, c.mc, data, 1);
    const auto parallel = train_ensemble(c.cfg, c.mc, data, 3);
    std::set<std::uint64_t> seeds;
    for (std::size_t k = 0; k < 3; ++k) {
      seeds.insert(serial[k].log.seed);
      CHECK(serial[k].log.seed == 10 + k);
      CHECK(bitwise_equal(serial[k].checkpoint, parallel[k].checkpoint));
      CHECK(serial[k].log == parallel[k].log);
      CHECK(bitwise_equal(serial[k].checkpoint, train_one(c.cfg, c.mc, data, 10 + k).checkpoint));
    }
    CHECK(seeds.size() == 3);
    CHECK(config_hash(serial[0].checkpoint.config) == config_hash(serial[2].checkpoint.config));
  }
}

TEST_CASE("ensemble averaging") {
  SegmentProbabilities a, b, s1, s2, s3;
  a.cc = {{1, 0, 0}};
  b.cc = {{0, 1, 0}};
  a.vol = b.vol = {{1, 0, 0}};
  a.speed_kph = b.speed_kph = {10};
  CHECK(average_probabilities({a, b}).cc[0] == std::array<double, 3>{0.5, 0.5, 0.0});
  s1 = s2 = s3 = a;
  s1.speed_kph = {30};
  s2.speed_kph = {36};
  s3.speed_kph = {42};
  CHECK(average_probabilities({s1, s2, s3}).speed_kph[0] == 36.0);
  CHECK(average_probabilities({a}) == a);
  CHECK_THROWS_AS(average_probabilities({}), ValidationError);

  auto c = small_city();
  c.cfg.epochs = 1;
  const auto data = prepare_data(c.ds, c.clusters, c.cfg, c.mc);
  c.cfg.ensemble = 3;
  const auto members = train_ensemble(c.cfg, c.mc, data, 1);
  const auto& rec = *data.validation[0];
  std::vector<SegmentProbabilities> each;
  for (const auto& m : members) {
    const TrafficModel model(m.checkpoint.config, m.checkpoint.params.clone());
    each.push_back(predict_probabilities(model.predict(data.seg_graph, data.val_features[0]), m.checkpoint.norm));
  }
  const auto single = ensemble_predict({&members[0].checkpoint}, c.ds, data.seg_graph, c.clusters, rec);
  CHECK(single == each[0]);
  const auto avg = ensemble_predict({&members[0].checkpoint, &members[1].checkpoint, &members[2].checkpoint}, c.ds,
                                    data.seg_graph, c.clusters, rec);
  for (std::size_t i = 0; i < avg.cc.size(); ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      const double mean = ((each[0].cc[i][j] + each[1].cc[i][j]) + each[2].cc[i][j]) / 3.0;
      CHECK(avg.cc[i][j] == mean);
    }
  }

  auto mismatched = members[1].checkpoint;
  mismatched.config.hidden = 8;
  mismatched.params = TrafficModel(mismatched.config).params().clone();
  CHECK_THROWS_AS(ensemble_predict({&members[0].checkpoint, &mismatched}, c.ds, data.seg_graph, c.clusters, rec),
                  ValidationError);
}

TEST_CASE("checkpoint round trip") {
  auto c = small_city();
  c.cfg.epochs = 1;
  const auto data = prepare_data(c.ds, c.clusters, c.cfg, c.mc);
  const auto r = train_one(c.cfg, c.mc, data, 2);
  fixtures::TempDir tmp("ckpt");
  save_checkpoint(r.checkpoint, tmp.path() / "m" / "checkpoint.bin");
  const auto back = load_checkpoint(tmp.path() / "m" / "checkpoint.bin");
  CHECK(bitwise_equal(back, r.checkpoint));
  CHECK(back.norm == r.checkpoint.norm);
  CHECK(back.config == r.checkpoint.config);
  CHECK(back.params.step() == r.checkpoint.params.step());
  for (std::size_t k = 0; k < back.params.entries().size(); ++k) {
    const auto& x = back.params.entries()[k];
    const auto& y = r.checkpoint.params.entries()[k];
    CHECK(x.name == y.name);
    CHECK(x.param.value() == y.param.value());
    CHECK(x.m == y.m);
    CHECK(x.v == y.v);
  }
  auto bytes = encode_checkpoint(r.checkpoint);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bytes), ValidationError);
  CHECK_THROWS_AS(decode_checkpoint(encode_checkpoint(r.checkpoint).substr(0, 100)), ValidationError);
  CHECK_THROWS_AS(load_checkpoint(tmp.path() / "nope.bin"), MissingFileError);
}
