#include <doctest.h>

#include <algorithm>
#include <set>

#include "fixtures.hpp"
#include "t4c/error.hpp"
#include "t4c/segment_graph.hpp"

using namespace t4c;

namespace {

// O(E^2) endpoint comparison.
nd::Adjacency brute_force_line_graph(const RoadGraph& g) {
  const auto& s = g.segments();
  nd::Adjacency adj(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (i == j) continue;
      const bool shared = s[i].tail_node == s[j].tail_node || s[i].tail_node == s[j].head_node ||
                          s[i].head_node == s[j].tail_node || s[i].head_node == s[j].head_node;
      if (shared) adj[i].push_back(j);
    }
  }
  return adj;
}

ClusterArtifact single_cluster_priors(const RoadGraph& g, int k = 1) {
  ClusterArtifact a;
  a.model.num_clusters = k;
  for (int i = 1; i < k; ++i) a.model.thresholds.push_back(10.0 * i);
  for (const auto& s : g.segments()) {
    PriorMatrix pm;
    pm.segment_id = s.segment_id;
    for (int c = 0; c < k; ++c) {
      pm.rows.push_back({0.5, 0.25, 0.25});
      pm.support.push_back(4);
    }
    a.priors[s.segment_id] = pm;
  }
  return a;
}

}  // namespace

TEST_CASE("shared endpoint adjacency") {
  const auto g = fixtures::graph({{"A", "B"}, {"B", "C"}, {"B", "A"}});
  const auto sg = build_line_graph(g);
  CHECK(sg.adjacency[0] == std::vector<std::size_t>{1, 2});
  CHECK(sg.adjacency[1] == std::vector<std::size_t>{0, 2});
  CHECK(sg.adjacency[2] == std::vector<std::size_t>{0, 1});

  const auto apart = build_line_graph(fixtures::graph({{"A", "B"}, {"C", "D"}}));
  CHECK(apart.adjacency[0].empty());
  CHECK(apart.adjacency[1].empty());
}

TEST_CASE("star with five spokes") {
  const auto g = fixtures::graph({{"X", "a"}, {"b", "X"}, {"X", "c"}, {"X", "d"}, {"e", "X"}});
  const auto sg = build_line_graph(g);
  CHECK(sg.adjacency == brute_force_line_graph(g));
  for (const auto& nb : sg.adjacency) CHECK(nb.size() == 4);
}

TEST_CASE("line graph equals brute force on random graphs") {
  Rng rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    const int nodes = 3 + static_cast<int>(rng.below(10));
    const int edges = 1 + static_cast<int>(rng.below(30));
    auto pairs = fixtures::random_edges(rng, nodes, edges);
    const auto g = fixtures::graph(pairs);
    const auto sg = build_line_graph(g);
    CHECK(sg.num_segments == g.segments().size());
    CHECK(sg.adjacency == brute_force_line_graph(g));
    for (std::size_t i = 0; i < sg.adjacency.size(); ++i) {
      CHECK(std::is_sorted(sg.adjacency[i].begin(), sg.adjacency[i].end()));
      for (auto j : sg.adjacency[i]) {
        CHECK(j != i);
        CHECK(std::binary_search(sg.adjacency[j].begin(), sg.adjacency[j].end(), i));
      }
    }
    for (std::size_t i = 0; i < sg.ids.size(); ++i) CHECK(sg.index.at(sg.ids[i]) == i);
  }
}

TEST_CASE("counter slice fills vacant endpoints with zeros") {
  const auto g = fixtures::graph({{"T", "H"}}, {"T", "H"});
  const auto r = fixtures::record("r", {{"T", {1, 2, 3, 4}}});
  const auto slice = counter_slice(g, g.segments()[0], r);
  CHECK(slice == std::array<double, 8>{1, 2, 3, 4, 0, 0, 0, 0});
}

TEST_CASE("normalisation statistics") {
  auto a = fixtures::segment("s0", "A", "B");
  auto b = fixtures::segment("s1", "B", "C");
  a.flow_speed = 0;
  b.flow_speed = 2;
  std::vector<NodeRec> nodes(3);
  nodes[0].node_id = "A";
  nodes[1].node_id = "B";
  nodes[2].node_id = "C";
  const RoadGraph g(nodes, {a, b});
  const std::vector<VolumeRecord> rs{fixtures::record("r1", {}), fixtures::record("r2", {})};
  const auto st = fit_normalization(g, rs);
  CHECK(st.cont_mean[1] == 1.0);
  CHECK(st.cont_std[1] == 1.0);
  // parsed_maxspeed is constant: sigma floored
  CHECK(st.cont_std[0] == kStdFloor);
  CHECK_THROWS_AS(fit_normalization(g, {}), ValidationError);

  const auto sg = build_line_graph(g);
  const auto priors = single_cluster_priors(g);
  const auto fb = assemble_features(g, sg, rs[0], priors.priors, st, priors.model);
  CHECK(fb.continuous.at(0, 1) == -1.0);
  CHECK(fb.continuous.at(1, 1) == 1.0);
  CHECK(fb.continuous.at(0, 0) == 0.0);
  CHECK(fb.continuous.at(1, 0) == 0.0);
}

TEST_CASE("normalisation ignores record order") {
  const auto g = fixtures::graph({{"A", "B"}, {"B", "C"}, {"C", "D"}}, {"A", "C"});
  Rng rng(4);
  std::vector<VolumeRecord> rs;
  for (int i = 0; i < 25; ++i) {
    rs.push_back(fixtures::record("r" + std::to_string(i),
                                  {{"A", {rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(0, 50), 1.0}},
                                   {"C", {rng.uniform(0, 9), 2.0, 3.0, rng.uniform(0, 90)}}}));
  }
  auto shuffled = rs;
  rng.shuffle(std::span<VolumeRecord>(shuffled));
  CHECK(fit_normalization(g, rs) == fit_normalization(g, shuffled));
}

TEST_CASE("prior block passes through at the cluster offset") {
  const auto g = fixtures::graph({{"A", "B"}, {"B", "C"}}, {"A"});
  auto a = single_cluster_priors(g, 3);
  a.priors.at("e1").rows[1] = {0.5, 0.25, 0.25};
  a.priors.at("e1").rows[0] = {1, 0, 0};
  a.priors.at("e1").rows[2] = {0, 0, 1};
  const auto sg = build_line_graph(g);
  const std::vector<VolumeRecord> rs{fixtures::record("r", {{"A", {5, 5, 5, 0}}})};  // volumeSum 15 -> cluster 1
  const auto st = fit_normalization(g, rs);

  const auto full = assemble_features(g, sg, rs[0], a.priors, st, a.model, PriorMode::kFull);
  CHECK(full.cluster == 1);
  CHECK(full.prior.cols() == 9);
  CHECK(full.prior.at(1, 3) == 0.5);
  CHECK(full.prior.at(1, 4) == 0.25);
  CHECK(full.prior.at(1, 5) == 0.25);
  CHECK(full.prior.at(1, 0) == 1.0);
  CHECK(full.prior.at(1, 8) == 1.0);
  CHECK(full.global.at(0, 1) == 1.0);
  CHECK(full.global.at(0, 0) == 0.0);

  const auto active = assemble_features(g, sg, rs[0], a.priors, st, a.model, PriorMode::kActiveRow);
  CHECK(active.prior.cols() == 3);
  CHECK(active.prior.at(1, 0) == 0.5);

  // Same inputs, same output.
  CHECK(assemble_features(g, sg, rs[0], a.priors, st, a.model) == full);

  auto missing = a.priors;
  missing.erase("e0");
  CHECK_THROWS_AS(assemble_features(g, sg, rs[0], missing, st, a.model), ValidationError);
}

TEST_CASE("prior mode names") {
  CHECK(parse_prior_mode("full") == PriorMode::kFull);
  CHECK(parse_prior_mode("active_row") == PriorMode::kActiveRow);
  CHECK(to_string(PriorMode::kActiveRow) == "active_row");
  CHECK_THROWS_AS(parse_prior_mode("rows"), ValidationError);
}
