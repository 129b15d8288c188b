#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gradcheck.hpp"
#include "model_fixture.hpp"
#include "t4c/error.hpp"
#include "t4c/model.hpp"

using namespace t4c;

namespace {

// Plain-loop dense layer: out = act(x W + b).
std::vector<double> dense(const std::vector<double>& x, const nd::Tensor& w, const nd::Tensor& b, bool relu_out) {
  std::vector<double> out(w.cols(), 0.0);
  for (std::size_t j = 0; j < w.cols(); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w.at(i, j);
    acc += b.values[j];
    out[j] = relu_out ? std::max(acc, 0.0) : acc;
  }
  return out;
}

std::vector<double> row_of(const nd::Tensor& t, std::size_t r) {
  const auto s = t.row(r);
  return {s.begin(), s.end()};
}

void append(std::vector<double>& a, const std::vector<double>& b) { a.insert(a.end(), b.begin(), b.end()); }

}  // namespace

TEST_CASE("static encoder input width") {
  ModelConfig c;
  CHECK(c.static_input_width() == 47);
  const TrafficModel m(c);
  CHECK(m.params().get("static.w").shape() == nd::Shape{47, 32});
  CHECK(m.params().get("emb.importance").shape() == nd::Shape{6, 5});
  CHECK(m.params().get("emb.lanes").shape() == nd::Shape{4, 3});
  const auto n = m.params().num_scalars();
  CHECK(n > 50'000);
  CHECK(n < 1'000'000);
}

TEST_CASE("config defaults, serialisation and hash") {
  ModelConfig c;
  CHECK(c.lambda == std::array<double, 3>{0.03, 1.0, 1.0});
  CHECK(c.gnn_layers == 3);
  CHECK(c.hidden == 64);
  CHECK(c.head_blocks == 2);
  CHECK(c.num_clusters == 10);
  CHECK(model_config_from_json(to_json(c)) == c);
  ModelConfig other = c;
  other.seed = 99;
  CHECK(config_hash(other) == config_hash(c));
  other.hidden = 16;
  CHECK(config_hash(other) != config_hash(c));
  ModelConfig bad = c;
  bad.lambda[1] = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = c;
  bad.cc_head = 5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("loss combination") {
  CHECK(combine_losses(2.0, 1.0, 0.5, {0.03, 1.0, 1.0}) == doctest::Approx(1.56).epsilon(1e-12));
  CHECK(std::abs(combine_losses(2.0, 1.0, 0.5, {0.03, 1.0, 1.0}) - 1.56) <= 1e-12);
}

TEST_CASE("targets and class weights") {
  const auto g = fixtures::graph({{"A", "B"}, {"B", "C"}, {"C", "D"}, {"D", "E"}});
  const auto sg = build_line_graph(g);
  LabelBundle b;
  b.record_id = "r";
  b.edges["e0"].cc = 0;
  b.edges["e0"].vol_class = 1;
  b.edges["e1"].cc = 1;
  b.edges["e1"].vol_class = 3;
  b.edges["e2"].cc = 3;
  b.edges["e2"].vol_class = 5;
  b.edges["e2"].speed_kph = 50;
  NormStats norm;
  norm.speed_mean = 30;
  norm.speed_std = 10;
  const auto t = make_targets(sg, &b, norm, 3);
  CHECK(t.cc == std::vector<int>{nd::kMasked, 0, 2, nd::kMasked});
  CHECK(t.vol == std::vector<int>{0, 1, 2, nd::kMasked});
  CHECK(t.speed_mask == std::vector<std::uint8_t>{0, 0, 1, 0});
  CHECK(t.speed[2] == 2.0);
  CHECK(make_targets(sg, &b, norm, 4).cc == std::vector<int>{0, 1, 3, nd::kMasked});
  const auto none = make_targets(sg, nullptr, norm, 3);
  CHECK(std::all_of(none.cc.begin(), none.cc.end(), [](int v) { return v == nd::kMasked; }));
  CHECK_THROWS_AS(volume_class_index(4), ValidationError);

  // N / (C * N_k), clipped to [0.1, 10]; empty classes get 10.
  const auto w = inverse_frequency_weights({50, 30, 20});
  CHECK(w[0] == doctest::Approx(100.0 / 150.0));
  CHECK(w[1] == doctest::Approx(100.0 / 90.0));
  CHECK(w[2] == doctest::Approx(100.0 / 60.0));
  const auto clipped = inverse_frequency_weights({1000, 1, 0});
  CHECK(clipped[0] == doctest::Approx(1001.0 / 3000.0));
  CHECK(clipped[1] == 10.0);
  CHECK(clipped[2] == 10.0);
  CHECK(inverse_frequency_weights({0, 0, 0}) == std::vector<double>{1, 1, 1});
}

TEST_CASE("predicted probabilities") {
  PredictionBundle p;
  p.cc_logits = nd::Tensor({2, 3}, {0, 0, 0, 10, 0, 0});
  p.vol_logits = nd::Tensor({2, 3}, {0, 0, 0, 0, 0, 0});
  p.speed_pred = nd::Tensor({2, 1}, {0.0, 1.0});
  NormStats norm;
  norm.speed_mean = 30;
  norm.speed_std = 10;
  const auto probs = predict_probabilities(p, norm);
  for (double v : probs.cc[0]) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(probs.cc[1][0] > 0.9999);
  CHECK(probs.speed_kph[0] == 30.0);
  CHECK(probs.speed_kph[1] == 40.0);

  PredictionBundle four = p;
  four.cc_logits = nd::Tensor({2, 4}, {5, 0, 0, 0, -3, 10, 0, 0});
  const auto dropped = predict_probabilities(four, norm);
  for (double v : dropped.cc[0]) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("full model gradient check on a 6-segment graph") {
  auto toy = fixtures::toy_instance({{"A", "B"}, {"B", "C"}, {"C", "A"}, {"C", "D"}, {"D", "E"}, {"E", "C"}}, {"A", "D"},
                                    3, 41);
  ModelConfig c;
  c.num_clusters = 3;
  c.hidden = 6;
  c.static_hidden = 5;
  c.volume_hidden = {4, 3};
  c.gnn_layers = 2;
  c.head_blocks = 1;
  c.seed = 3;
  TrafficModel model(c);
  Rng rng(5);
  const auto labels = fixtures::random_labels(toy.graph, toy.record.record_id, rng);
  const auto targets = make_targets(toy.seg_graph, &labels, toy.norm, 3);
  ClassWeights w;
  w.cc = {0.7, 1.2, 2.0};
  w.vol = {1.0, 0.4, 3.0};
  std::vector<nd::Var> params;
  for (const auto& e : model.params().entries()) params.push_back(e.param);
  const auto r = fixtures::grad_check(params, [&] {
    return compute_loss(model.forward(toy.seg_graph, toy.features), targets, w, c.lambda).total;
  });
  CHECK(r.checked == model.params().num_scalars());
  INFO("worst: " << model.params().entries()[r.worst_param].name << "[" << r.worst_index << "] analytic "
                 << r.worst_analytic << " numeric " << r.worst_numeric << " max abs " << r.max_abs_error);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("loss report identity and masking") {
  auto toy = fixtures::toy_instance({{"A", "B"}, {"B", "C"}, {"C", "A"}, {"X", "Y"}}, {"A"}, 10, 8);
  const TrafficModel model(ModelConfig{});
  Rng rng(1);
  auto labels = fixtures::random_labels(toy.graph, "r", rng);
  const auto out = model.forward(toy.seg_graph, toy.features);
  const auto w = fit_class_weights({make_targets(toy.seg_graph, &labels, toy.norm)});
  const auto rep = compute_loss(out, make_targets(toy.seg_graph, &labels, toy.norm), w, {0.03, 1, 1}).report;
  CHECK(std::abs(rep.L - combine_losses(rep.L_c, rep.L_s, rep.L_v, {0.03, 1, 1})) <= 1e-12);
  CHECK(rep.L == combine_losses(rep.L_c, rep.L_s, rep.L_v, {0.03, 1, 1}));

  // The isolated segment e3 carries no labels: dropping its labels changes nothing only when
  // it had none, so compare against a bundle without it.
  LabelBundle without = labels;
  without.edges.erase("e3");
  auto toy3 = fixtures::toy_instance({{"A", "B"}, {"B", "C"}, {"C", "A"}}, {"A"}, 10, 8);
  const auto out3 = model.forward(toy3.seg_graph, toy3.features);
  (void)out3;
  const auto rep_with_unlabeled =
      compute_loss(out, make_targets(toy.seg_graph, &without, toy.norm), w, {0.03, 1, 1}).report;
  LabelBundle only_e3;
  only_e3.record_id = "r";
  const auto rep_empty = compute_loss(out, make_targets(toy.seg_graph, &only_e3, toy.norm), w, {0.03, 1, 1}).report;
  CHECK(rep_empty.L == 0.0);
  CHECK(rep_empty.cc_masked());
  CHECK(rep_empty.speed_masked());
  CHECK(rep_empty.vol_masked());
  CHECK(rep_with_unlabeled.n_c <= rep.n_c);
}

TEST_CASE("adding an unlabeled isolated segment leaves the loss unchanged") {
  auto small = fixtures::toy_instance({{"A", "B"}, {"B", "C"}, {"C", "D"}}, {"A"}, 1, 4);
  // Same instance plus one extra segment with no neighbours and no labels.
  SegmentGraph sg = small.seg_graph;
  sg.num_segments = 4;
  sg.adjacency.emplace_back();
  sg.ids.push_back("extra");
  sg.index["extra"] = 3;
  FeatureBundle f = small.features;
  f.num_segments = 4;
  for (auto& cat : f.categorical) cat.push_back(1);
  auto grow = [](nd::Tensor& t, double fill) {
    t.shape[0] += 1;
    t.values.resize(t.shape[0] * t.shape[1], fill);
  };
  grow(f.continuous, 0.7);
  grow(f.counter, -0.2);
  grow(f.counter_raw, 0.0);
  grow(f.prior, 1.0 / 3.0);
  grow(f.global, 0.0);
  f.global.at(3, 0) = 1.0;
  f.global.at(3, 1) = small.features.global.at(0, 1);

  ModelConfig c;
  c.num_clusters = 1;
  const TrafficModel model(c);
  Rng rng(9);
  const auto labels = fixtures::random_labels(small.graph, "r", rng);
  ClassWeights w;
  const auto a = compute_loss(model.forward(small.seg_graph, small.features),
                              make_targets(small.seg_graph, &labels, small.norm), w, c.lambda)
                     .report;
  const auto b = compute_loss(model.forward(sg, f), make_targets(sg, &labels, small.norm), w, c.lambda).report;
  CHECK(a.L == b.L);
  CHECK(a.n_c == b.n_c);
  CHECK(a.n_s == b.n_s);
}

TEST_CASE("single isolated segment matches a layer-by-layer oracle") {
  auto toy = fixtures::toy_instance({{"A", "B"}}, {"A"}, 2, 6);
  ModelConfig c;
  c.num_clusters = 2;
  c.hidden = 8;
  c.static_hidden = 4;
  c.volume_hidden = {5};
  c.gnn_layers = 2;
  c.head_blocks = 1;
  const TrafficModel model(c);
  const auto& p = model.params();
  auto P = [&](const std::string& n) { return p.get(n).value(); };
  const auto& f = toy.features;

  std::vector<double> static_in;
  const std::size_t codes[] = {static_cast<std::size_t>(f.categorical[0][0]), static_cast<std::size_t>(f.categorical[1][0]),
                               static_cast<std::size_t>(f.categorical[2][0]), static_cast<std::size_t>(f.categorical[3][0])};
  append(static_in, row_of(P("emb.importance"), codes[0]));
  append(static_in, row_of(P("emb.oneway"), codes[1]));
  append(static_in, row_of(P("emb.tunnel"), codes[2]));
  append(static_in, row_of(P("emb.lanes"), codes[3]));
  append(static_in, row_of(f.continuous, 0));
  append(static_in, row_of(f.prior, 0));
  const auto st = dense(static_in, P("static.w"), P("static.b"), true);
  std::vector<double> vol_in = row_of(f.counter, 0);
  append(vol_in, row_of(f.global, 0));
  const auto vol = dense(vol_in, P("volume.0.w"), P("volume.0.b"), true);
  std::vector<double> enc_in = vol;
  append(enc_in, st);
  auto h = dense(enc_in, P("encoder.w"), P("encoder.b"), true);
  for (int l = 0; l < 2; ++l) {
    // No neighbours: only the self path remains.
    h = dense(h, P("gnn." + std::to_string(l) + ".w_self"), P("gnn." + std::to_string(l) + ".b"), true);
  }
  auto head = [&](const std::string& name) {
    auto inner = dense(h, P(name + ".block0.fc1.w"), P(name + ".block0.fc1.b"), true);
    auto res = dense(inner, P(name + ".block0.fc2.w"), P(name + ".block0.fc2.b"), false);
    std::vector<double> z(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) z[i] = h[i] + res[i];
    return dense(z, P(name + ".out.w"), P(name + ".out.b"), false);
  };
  const auto pred = model.predict(toy.seg_graph, f);
  const auto cc = head("head.cc");
  const auto speed = head("head.speed");
  const auto volh = head("head.vol");
  for (std::size_t j = 0; j < 3; ++j) CHECK(pred.cc_logits.at(0, j) == doctest::Approx(cc[j]).epsilon(1e-13));
  for (std::size_t j = 0; j < 3; ++j) CHECK(pred.vol_logits.at(0, j) == doctest::Approx(volh[j]).epsilon(1e-13));
  CHECK(pred.speed_pred.values[0] == doctest::Approx(speed[0]).epsilon(1e-13));
}

TEST_CASE("permuting segments permutes outputs") {
  const std::vector<std::pair<std::string, std::string>> edges{{"A", "B"}, {"B", "C"}, {"C", "A"}, {"C", "D"}, {"D", "B"}};
  auto toy = fixtures::toy_instance(edges, {"A", "C"}, 2, 12);
  ModelConfig c;
  c.num_clusters = 2;
  const TrafficModel model(c);
  const auto pred = model.predict(toy.seg_graph, toy.features);

  // Reverse the order of segments, keeping everything else equal.
  const std::size_t n = toy.features.num_segments;
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = n - 1 - i;  // new i <- old perm[i]
  auto f = toy.features;
  auto permute_rows = [&](nd::Tensor& t) {
    const auto src = t;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < t.cols(); ++j) t.at(i, j) = src.at(perm[i], j);
    }
  };
  for (auto& cat : f.categorical) {
    const auto src = cat;
    for (std::size_t i = 0; i < n; ++i) cat[i] = src[perm[i]];
  }
  permute_rows(f.continuous);
  permute_rows(f.counter);
  permute_rows(f.counter_raw);
  permute_rows(f.prior);
  permute_rows(f.global);
  SegmentGraph sg = toy.seg_graph;
  std::vector<std::size_t> inverse(n);
  for (std::size_t i = 0; i < n; ++i) inverse[perm[i]] = i;
  for (std::size_t i = 0; i < n; ++i) {
    sg.adjacency[i].clear();
    for (auto j : toy.seg_graph.adjacency[perm[i]]) sg.adjacency[i].push_back(inverse[j]);
    std::sort(sg.adjacency[i].begin(), sg.adjacency[i].end());
  }
  const auto permuted = model.predict(sg, f);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(permuted.cc_logits.at(i, j) == doctest::Approx(pred.cc_logits.at(perm[i], j)).epsilon(1e-12));
    }
    CHECK(permuted.speed_pred.values[i] == doctest::Approx(pred.speed_pred.values[perm[i]]).epsilon(1e-12));
  }
}

TEST_CASE("ablation switches cut the corresponding inputs") {
  auto toy = fixtures::toy_instance({{"A", "B"}, {"B", "C"}, {"C", "A"}}, {"A"}, 2, 19);
  ModelConfig c;
  c.num_clusters = 2;
  auto altered = toy.features;
  for (auto& v : altered.prior.values) v = 0.5;
  altered.global.at(0, 0) = 1 - altered.global.at(0, 0);

  c.use_prior = false;
  const TrafficModel no_prior(c);
  CHECK(no_prior.predict(toy.seg_graph, toy.features).cc_logits ==
        no_prior.predict(toy.seg_graph, altered).cc_logits);

  c.use_prior = true;
  const TrafficModel with_prior(c);
  CHECK_FALSE(with_prior.predict(toy.seg_graph, toy.features).cc_logits ==
              with_prior.predict(toy.seg_graph, altered).cc_logits);

  c.use_static = false;
  const TrafficModel no_static(c);
  auto other_static = toy.features;
  for (auto& v : other_static.continuous.values) v += 1.0;
  other_static.categorical[0][0] = 5;
  CHECK(no_static.predict(toy.seg_graph, toy.features).cc_logits ==
        no_static.predict(toy.seg_graph, other_static).cc_logits);

  ModelConfig no_gnn;
  no_gnn.num_clusters = 2;
  no_gnn.gnn_layers = 0;
  const TrafficModel plain(no_gnn);
  CHECK_FALSE(plain.params().contains("gnn.0.w_self"));
  CHECK(plain.predict(toy.seg_graph, toy.features).cc_logits.rows() == 3);
}

TEST_CASE("adopting mismatched parameters fails") {
  ModelConfig c;
  const TrafficModel m(c);
  ModelConfig wider = c;
  wider.hidden = 32;
  CHECK_THROWS_AS(TrafficModel(wider, m.params().clone()), ValidationError);
  CHECK_NOTHROW(TrafficModel(c, m.params().clone()));
}
