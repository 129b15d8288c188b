#include <doctest.h>

#include <cmath>
#include <string>

#include "gradcheck.hpp"
#include "t4c/ndauto.hpp"
#include "t4c/rng.hpp"

using namespace t4c;
using namespace t4c::nd;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  auto t = Tensor::zeros(std::move(shape));
  for (auto& v : t.values) v = rng.uniform(lo, hi);
  return t;
}

// sum(x * c) for a fixed random c, turning any tensor into a scalar with a generic upstream gradient.
Var probe(const Var& x, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = x.shape()[0], f = x.value().cols();
  const auto c = random_tensor(rng, {n, f});
  Var total;
  for (std::size_t j = 0; j < f; ++j) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = c.at(i, j);
    auto term = matmul(constant(Tensor({1, n}, w)), slice_cols(x, j, j + 1));  // 1 x 1
    total = total ? add(total, term) : term;
  }
  return total;
}

Adjacency random_adjacency(Rng& rng, std::size_t n) {
  Adjacency adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rng.bernoulli(0.3)) {
        adj[i].push_back(j);
        adj[j].push_back(i);
      }
    }
  }
  return adj;
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("relu forward and subgradient") {
  auto x = parameter(Tensor({1, 3}, {-1.0, 0.0, 2.0}));
  auto y = relu(x);
  CHECK(y.value().values == std::vector<double>{0.0, 0.0, 2.0});
  backward(matmul(y, constant(Tensor({3, 1}, {1.0, 1.0, 1.0}))));
  CHECK(x.grad().values == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("mean neighbour aggregate") {
  Rng rng(8);
  auto x = constant(random_tensor(rng, {3, 4}));
  Adjacency adj{{1}, {0}, {}};
  const auto out = mean_neighbor_aggregate(x, adj).value();
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(out.at(2, c) == 0.0);
    CHECK(out.at(0, c) == x.value().at(1, c));
  }

  // Dense oracle: A X / deg.
  for (std::size_t n : {1u, 5u, 12u, 20u}) {
    const auto a = random_adjacency(rng, n);
    const auto feats = random_tensor(rng, {n, 3});
    const auto got = mean_neighbor_aggregate(constant(feats), a).value();
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> dense(n, 0.0);
      for (auto j : a[i]) dense[j] = 1.0;
      const double deg = static_cast<double>(a[i].size());
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += dense[j] * feats.at(j, c);
        CHECK(got.at(i, c) == doctest::Approx(deg > 0 ? acc / deg : 0.0).epsilon(1e-14));
      }
    }
  }
  CHECK_THROWS_AS(mean_neighbor_aggregate(x, Adjacency{{5}, {}, {}}), IndexError);
}

TEST_CASE("shape and index errors") {
  auto a = constant(Tensor::zeros({2, 3}));
  auto b = constant(Tensor::zeros({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
  }
  const std::vector<int> bad{0, 7};
  CHECK_THROWS_AS(embedding_lookup(constant(Tensor::zeros({3, 2})), bad), IndexError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), ShapeError);
}

TEST_CASE("gradient checks per primitive") {
  Rng rng(2024);
  auto w = parameter(random_tensor(rng, {4, 3}));
  auto x = parameter(random_tensor(rng, {5, 4}));
  auto bias = parameter(random_tensor(rng, {3}));
  auto other = parameter(random_tensor(rng, {5, 3}));
  auto table = parameter(random_tensor(rng, {6, 2}));
  const std::vector<int> idx{0, 3, 3, 5, 1};
  const auto adj = random_adjacency(rng, 5);

  SUBCASE("matmul, add, add_bias") {
    const auto r = fixtures::grad_check({w, x, bias, other},
                                        [&] { return probe(add(add_bias(matmul(x, w), bias), other), 1); });
    CHECK(r.max_rel_error < kTol);
  }
  SUBCASE("relu and scale") {
    const auto r = fixtures::grad_check({w, x}, [&] { return probe(scale(relu(matmul(x, w)), -1.7), 2); });
    CHECK(r.max_rel_error < kTol);
  }
  SUBCASE("concat and slice") {
    const auto r = fixtures::grad_check({x, other}, [&] {
      return probe(slice_cols(concat_cols({x, other, x}), 2, 9), 3);
    });
    CHECK(r.max_rel_error < kTol);
  }
  SUBCASE("embedding lookup") {
    const auto r = fixtures::grad_check({table}, [&] { return probe(embedding_lookup(table, idx), 4); });
    CHECK(r.max_rel_error < kTol);
  }
  SUBCASE("softmax") {
    const auto r = fixtures::grad_check({x}, [&] { return probe(softmax_rows(x), 5); });
    CHECK(r.max_rel_error < kTol);
  }
  SUBCASE("mean neighbour aggregate") {
    const auto r = fixtures::grad_check({x}, [&] { return probe(mean_neighbor_aggregate(x, adj), 6); });
    CHECK(r.max_rel_error < kTol);
  }
  SUBCASE("weighted cross entropy with a masked row") {
    const std::vector<int> labels{2, kMasked, 0, 1, 1};
    const std::vector<double> cw{0.5, 2.0, 1.3};
    const auto r = fixtures::grad_check({w, x}, [&] { return weighted_cross_entropy(matmul(x, w), labels, cw).loss; });
    CHECK(r.max_rel_error < kTol);
  }
  SUBCASE("mse with mask") {
    auto pred = parameter(random_tensor(rng, {5, 1}));
    const std::vector<double> target{0.1, -2.0, 0.3, 1.0, 0.0};
    const std::vector<std::uint8_t> mask{1, 0, 1, 1, 1};
    const auto r = fixtures::grad_check({pred}, [&] { return mse(pred, target, mask).loss; });
    CHECK(r.max_rel_error < kTol);
  }
}

TEST_CASE("random five-parameter graph") {
  Rng rng(77);
  auto p1 = parameter(random_tensor(rng, {3, 4}));
  auto p2 = parameter(random_tensor(rng, {4}));
  auto p3 = parameter(random_tensor(rng, {4, 4}));
  auto p4 = parameter(random_tensor(rng, {4, 3}));
  auto p5 = parameter(random_tensor(rng, {5, 2}));
  const auto input = constant(random_tensor(rng, {6, 3}));
  const auto adj = random_adjacency(rng, 6);
  const std::vector<int> idx{0, 1, 2, 3, 4, 0};
  const std::vector<int> labels{0, 1, 2, 2, 1, 0};
  const std::vector<double> cw{1.0, 1.5, 0.7};
  auto loss = [&] {
    auto h = relu(linear(input, p1, p2));
    h = add(h, mean_neighbor_aggregate(matmul(h, p3), adj));
    auto logits = add(matmul(h, p4), slice_cols(concat_cols({embedding_lookup(p5, idx), embedding_lookup(p5, idx)}), 1, 4));
    return weighted_cross_entropy(logits, labels, cw).loss;
  };
  const auto r = fixtures::grad_check({p1, p2, p3, p4, p5}, loss);
  CHECK(r.checked == 12 + 4 + 16 + 12 + 10);
  CHECK(r.max_rel_error < kTol);
}

TEST_CASE("weighted cross entropy values") {
  const std::vector<double> ones{1, 1, 1};
  const std::vector<int> label0{0};
  CHECK(weighted_cross_entropy(constant(Tensor({1, 3}, {0, 0, 0})), label0, ones).loss.item() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-15));

  const std::vector<double> w{2, 1, 1};
  const double oracle = 2.0 * -std::log(std::exp(2.0) / (std::exp(2.0) + 2.0));
  CHECK(weighted_cross_entropy(constant(Tensor({1, 3}, {2, 0, 0})), label0, w).loss.item() ==
        doctest::Approx(oracle).epsilon(1e-14));
  CHECK(oracle == doctest::Approx(0.479090).epsilon(1e-6));

  auto logits = parameter(Tensor({1, 3}, {0.3, -1.0, 2.0}));
  const std::vector<int> masked{kMasked};
  const auto lv = weighted_cross_entropy(logits, masked, ones);
  CHECK(lv.all_masked());
  CHECK(lv.loss.item() == 0.0);
  backward(lv.loss);
  CHECK(logits.grad().values == std::vector<double>{0, 0, 0});
}

TEST_CASE("masked rows contribute no gradient") {
  Rng rng(31);
  auto logits = parameter(random_tensor(rng, {4, 3}));
  const std::vector<double> cw{1.0, 2.0, 3.0};
  auto grad_for = [&](std::vector<int> labels) {
    logits.zero_grad();
    backward(weighted_cross_entropy(logits, labels, cw).loss);
    return logits.grad();
  };
  const auto base = grad_for({0, kMasked, 2, 1});
  CHECK(grad_for({0, kMasked, 2, 1}) == base);
  for (std::size_t c = 0; c < 3; ++c) CHECK(base.at(1, c) == 0.0);
}

TEST_CASE("mse values") {
  const std::vector<std::uint8_t> on{1};
  CHECK(mse(constant(Tensor({1, 1}, {3.0})), std::vector<double>{3.0}, on).loss.item() == 0.0);
  auto pred = parameter(Tensor({1, 1}, {3.0}));
  const auto lv = mse(pred, std::vector<double>{1.0}, on);
  CHECK(lv.loss.item() == 4.0);
  backward(lv.loss);
  CHECK(pred.grad().values[0] == 4.0);
  const auto r = fixtures::grad_check({pred}, [&] { return mse(pred, std::vector<double>{1.0}, on).loss; });
  CHECK(r.max_abs_error < 1e-8);
  const std::vector<std::uint8_t> off{0};
  CHECK(mse(pred, std::vector<double>{1.0}, off).loss.item() == 0.0);
}

TEST_CASE("softmax rows") {
  Rng rng(12);
  const auto x = random_tensor(rng, {10, 5}, -30, 30);
  const auto p = softmax_rows(constant(x)).value();
  for (std::size_t i = 0; i < 10; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += p.at(i, j);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  auto shifted = x;
  for (auto& v : shifted.values) v += 1000.0;
  const auto q = softmax_rows(constant(shifted)).value();
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(q.values[i] == doctest::Approx(p.values[i]).epsilon(1e-12));
}

TEST_CASE("adam") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  {
    ParamStore store;
    auto p = store.add("p", Tensor({1}, {0.5}));
    store.zero_grad();
    adam_step(store, cfg);
    CHECK(p.value().values[0] == 0.5);
    CHECK(store.step() == 1);
  }
  {
    ParamStore store;
    auto p = store.add("p", Tensor({1, 1}, {0.0}));
    store.zero_grad();
    backward(p);  // dp/dp = 1
    adam_step(store, cfg);
    // m_hat = 1, v_hat = 1: delta = -lr * 1 / (1 + eps)
    CHECK(p.value().values[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  }
  auto run = [&] {
    ParamStore store;
    Initializer init(5);
    auto w = store.add("w", init.xavier(3, 2));
    const auto x = constant(Tensor({2, 3}, {1, 2, 3, -1, 0.5, 2}));
    const std::vector<int> labels{0, 1};
    const std::vector<double> cw{1, 1};
    for (int i = 0; i < 5; ++i) {
      store.zero_grad();
      backward(weighted_cross_entropy(matmul(x, w), labels, cw).loss);
      adam_step(store, cfg);
    }
    return w.value();
  };
  CHECK(run() == run());
}

TEST_CASE("param store clone is deep") {
  ParamStore store;
  auto p = store.add("p", Tensor({2}, {1.0, 2.0}));
  auto copy = store.clone();
  p.mutable_value().values[0] = 9.0;
  CHECK(copy.get("p").value().values[0] == 1.0);
  CHECK(copy.num_scalars() == 2);
  CHECK_THROWS(store.add("p", Tensor({1}, {0.0})));
}

TEST_CASE("initialisers") {
  Initializer init(1);
  const auto w = init.xavier(30, 20);
  const double a = std::sqrt(6.0 / 50.0);
  for (double v : w.values) CHECK(std::abs(v) <= a);
  Initializer again(1);
  CHECK(again.xavier(30, 20) == w);
  const auto e = init.normal({1000}, 0.1);
  double m = 0, s = 0;
  for (double v : e.values) m += v;
  m /= 1000.0;
  for (double v : e.values) s += (v - m) * (v - m);
  CHECK(std::abs(m) < 0.02);
  CHECK(std::sqrt(s / 1000.0) == doctest::Approx(0.1).epsilon(0.1));
}
