#include "t4c/ndauto.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "t4c/rng.hpp"

namespace t4c::nd {

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + to_string(shape) + " needs " + std::to_string(numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
}

Tensor Tensor::zeros(Shape s) {
  const auto n = numel(s);
  return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows[0].size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(v));
}

Tensor& Node::ensure_grad() {
  if (grad.values.size() != value.values.size()) grad = Tensor::zeros(value.shape);
  return grad;
}

void Node::accumulate(std::span<const double> g) {
  auto& buf = ensure_grad().values;
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

void Var::zero_grad() const {
  node_->grad = Tensor::zeros(node_->value.shape);
}

double Var::item() const {
  if (value().size() != 1) throw ShapeError("item() on non-scalar of shape " + to_string(shape()));
  return value().values[0];
}

Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return Var(std::move(n));
}

Var parameter(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return Var(std::move(n));
}

namespace {

Var make_op(Tensor value, std::vector<std::shared_ptr<Node>> parents, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(bw);
  }
  return Var(std::move(n));
}

void require_2d(const Var& x, const char* op) {
  if (x.shape().size() != 2) throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + to_string(x.shape()));
}

}  // namespace

void backward(const Var& root) {
  if (root.value().size() != 1) throw ShapeError("backward: root must be scalar, got " + to_string(root.shape()));
  if (!root.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  const double one = 1.0;
  root.node()->accumulate(std::span<const double>(&one, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) {
      n->ensure_grad();
      n->backward(*n);
    }
  }
  // Release intermediate gradient buffers; leaves keep theirs.
  for (Node* n : order) {
    if (n->backward) n->grad = Tensor();
  }
}

Var matmul(const Var& a, const Var& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: shape mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor out = Tensor::zeros({n, m});
  const double* A = a.value().values.data();
  const double* B = b.value().values.data();
  double* C = out.values.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * m;
      double* crow = C + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  auto an = a.node(), bn = b.node();
  return make_op(std::move(out), {an, bn}, [an, bn, n, k, m](Node& self) {
    const double* G = self.grad.values.data();
    const double* A = an->value.values.data();
    const double* B = bn->value.values.data();
    if (an->requires_grad) {
      double* dA = an->ensure_grad().values.data();
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = G + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * m;
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
          dA[i * k + p] += s;
        }
      }
    }
    if (bn->requires_grad) {
      double* dB = bn->ensure_grad().values.data();
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = G + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          double* drow = dB + p * m;
          for (std::size_t j = 0; j < m; ++j) drow[j] += av * grow[j];
        }
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.value().values[i];
  auto an = a.node(), bn = b.node();
  return make_op(std::move(out), {an, bn}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad.values);
    if (bn->requires_grad) bn->accumulate(self.grad.values);
  });
}

Var add_bias(const Var& x, const Var& bias) {
  require_2d(x, "add_bias");
  const std::size_t n = x.shape()[0], f = x.shape()[1];
  if (bias.value().size() != f) {
    throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not match features of " + to_string(x.shape()));
  }
  Tensor out = x.value();
  const auto& bv = bias.value().values;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) out.values[i * f + j] += bv[j];
  }
  auto xn = x.node(), bn = bias.node();
  return make_op(std::move(out), {xn, bn}, [xn, bn, n, f](Node& self) {
    if (xn->requires_grad) xn->accumulate(self.grad.values);
    if (bn->requires_grad) {
      auto& db = bn->ensure_grad().values;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) db[j] += self.grad.values[i * f + j];
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values) v = v > 0.0 ? v : 0.0;
  auto xn = x.node();
  return make_op(std::move(out), {xn}, [xn](Node& self) {
    auto& dx = xn->ensure_grad().values;
    const auto& xv = xn->value.values;
    // subgradient at 0 is 0
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xv[i] > 0.0) dx[i] += self.grad.values[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x.value();
  for (auto& v : out.values) v *= factor;
  auto xn = x.node();
  return make_op(std::move(out), {xn}, [xn, factor](Node& self) {
    auto& dx = xn->ensure_grad().values;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * self.grad.values[i];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts[0].shape().empty() ? 0 : parts[0].shape()[0];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.shape()[0] != n) {
      throw ShapeError("concat_cols: row mismatch " + to_string(parts[0].shape()) + " vs " + to_string(p.shape()));
    }
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Tensor out = Tensor::zeros({n, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value().values;
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(v.data() + i * widths[k], widths[k], out.values.data() + i * total + offset);
    }
    offset += widths[k];
  }
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  auto captured = nodes;
  return make_op(std::move(out), std::move(nodes), [captured, widths, n, total](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < captured.size(); ++k) {
      if (captured[k]->requires_grad) {
        auto& d = captured[k]->ensure_grad().values;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < widths[k]; ++j) d[i * widths[k] + j] += self.grad.values[i * total + off + j];
        }
      }
      off += widths[k];
    }
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  require_2d(x, "slice_cols");
  const std::size_t n = x.shape()[0], f = x.shape()[1];
  if (begin > end || end > f) {
    throw IndexError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + to_string(x.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out = Tensor::zeros({n, w});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(x.value().values.data() + i * f + begin, w, out.values.data() + i * w);
  }
  auto xn = x.node();
  return make_op(std::move(out), {xn}, [xn, n, f, begin, w](Node& self) {
    auto& d = xn->ensure_grad().values;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < w; ++j) d[i * f + begin + j] += self.grad.values[i * w + j];
    }
  });
}

Var embedding_lookup(const Var& table, std::span<const int> indices) {
  require_2d(table, "embedding_lookup");
  const std::size_t vocab = table.shape()[0], dim = table.shape()[1];
  std::vector<int> idx(indices.begin(), indices.end());
  Tensor out = Tensor::zeros({idx.size(), dim});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw IndexError("embedding_lookup: index " + std::to_string(idx[i]) + " out of range for vocabulary " +
                       std::to_string(vocab));
    }
    std::copy_n(table.value().values.data() + static_cast<std::size_t>(idx[i]) * dim, dim, out.values.data() + i * dim);
  }
  auto tn = table.node();
  return make_op(std::move(out), {tn}, [tn, idx = std::move(idx), dim](Node& self) {
    auto& d = tn->ensure_grad().values;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::size_t r = static_cast<std::size_t>(idx[i]);
      for (std::size_t j = 0; j < dim; ++j) d[r * dim + j] += self.grad.values[i * dim + j];
    }
  });
}

Var softmax_rows(const Var& x) {
  require_2d(x, "softmax_rows");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.values.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= z;
  }
  auto xn = x.node();
  Tensor probs = out;
  return make_op(std::move(out), {xn}, [xn, probs = std::move(probs), n, c](Node& self) {
    auto& d = xn->ensure_grad().values;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad.values[i * c + j] * probs.values[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        d[i * c + j] += probs.values[i * c + j] * (self.grad.values[i * c + j] - dot);
      }
    }
  });
}

Var mean_neighbor_aggregate(const Var& x, const Adjacency& adj) {
  require_2d(x, "mean_neighbor_aggregate");
  const std::size_t n = x.shape()[0], f = x.shape()[1];
  if (adj.size() != n) {
    throw ShapeError("mean_neighbor_aggregate: adjacency has " + std::to_string(adj.size()) + " rows, features " +
                     to_string(x.shape()));
  }
  Tensor out = Tensor::zeros({n, f});
  const double* X = x.value().values.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (adj[i].empty()) continue;
    double* orow = out.values.data() + i * f;
    for (auto j : adj[i]) {
      if (j >= n) throw IndexError("mean_neighbor_aggregate: neighbor " + std::to_string(j) + " out of range");
      for (std::size_t k = 0; k < f; ++k) orow[k] += X[j * f + k];
    }
    const double inv = 1.0 / static_cast<double>(adj[i].size());
    for (std::size_t k = 0; k < f; ++k) orow[k] *= inv;
  }
  auto xn = x.node();
  return make_op(std::move(out), {xn}, [xn, a = adj, f](Node& self) {
    auto& d = xn->ensure_grad().values;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].empty()) continue;
      const double inv = 1.0 / static_cast<double>(a[i].size());
      const double* grow = self.grad.values.data() + i * f;
      for (auto j : a[i]) {
        for (std::size_t k = 0; k < f; ++k) d[j * f + k] += inv * grow[k];
      }
    }
  });
}

LossValue weighted_cross_entropy(const Var& logits, std::span<const int> labels, std::span<const double> class_weights) {
  require_2d(logits, "weighted_cross_entropy");
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != n) {
    throw ShapeError("weighted_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     to_string(logits.shape()));
  }
  if (class_weights.size() != c) throw ShapeError("weighted_cross_entropy: class weight count != classes");
  std::size_t count = 0;
  for (int y : labels) {
    if (y == kMasked) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw IndexError("weighted_cross_entropy: label out of range");
    ++count;
  }
  if (count == 0) return {constant(Tensor::scalar(0.0)), 0};

  // Stable log-softmax, kept for backward.
  Tensor probs = logits.value();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double* row = probs.values.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    if (labels[i] != kMasked) {
      total += class_weights[static_cast<std::size_t>(labels[i])] * (log_z - row[labels[i]]);
    }
    for (std::size_t j = 0; j < c; ++j) row[j] = std::exp(row[j] - log_z);
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  std::vector<int> y(labels.begin(), labels.end());
  std::vector<double> w(class_weights.begin(), class_weights.end());
  auto ln = logits.node();
  Var loss = make_op(Tensor::scalar(total * inv_count), {ln},
                     [ln, probs = std::move(probs), y = std::move(y), w = std::move(w), inv_count, n, c](Node& self) {
                       auto& d = ln->ensure_grad().values;
                       const double g = self.grad.values[0];
                       for (std::size_t i = 0; i < n; ++i) {
                         if (y[i] == kMasked) continue;
                         const double coef = g * w[static_cast<std::size_t>(y[i])] * inv_count;
                         for (std::size_t j = 0; j < c; ++j) {
                           const double target = static_cast<int>(j) == y[i] ? 1.0 : 0.0;
                           d[i * c + j] += coef * (probs.values[i * c + j] - target);
                         }
                       }
                     });
  return {loss, count};
}

LossValue mse(const Var& pred, std::span<const double> target, std::span<const std::uint8_t> mask) {
  const std::size_t n = pred.value().size();
  if (target.size() != n || mask.size() != n) {
    throw ShapeError("mse: pred " + to_string(pred.shape()) + " vs target length " + std::to_string(target.size()) +
                     " and mask length " + std::to_string(mask.size()));
  }
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double e = pred.value().values[i] - target[i];
    total += e * e;
    ++count;
  }
  if (count == 0) return {constant(Tensor::scalar(0.0)), 0};
  const double inv_count = 1.0 / static_cast<double>(count);
  std::vector<double> t(target.begin(), target.end());
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  auto pn = pred.node();
  Var loss = make_op(Tensor::scalar(total * inv_count), {pn},
                     [pn, t = std::move(t), m = std::move(m), inv_count](Node& self) {
                       auto& d = pn->ensure_grad().values;
                       const double g = self.grad.values[0];
                       for (std::size_t i = 0; i < d.size(); ++i) {
                         if (m[i]) d[i] += g * 2.0 * (pn->value.values[i] - t[i]) * inv_count;
                       }
                     });
  return {loss, count};
}

Var ParamStore::add(const std::string& name, Tensor init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  Entry e;
  e.name = name;
  e.m = Tensor::zeros(init.shape);
  e.v = Tensor::zeros(init.shape);
  e.param = parameter(std::move(init));
  entries_.push_back(std::move(e));
  return entries_.back().param;
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

Var ParamStore::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.param;
  }
  throw std::out_of_range("unknown parameter " + name);
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.param.value().size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.param.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& e : entries_) {
    Entry c;
    c.name = e.name;
    c.param = parameter(e.param.value());
    c.m = e.m;
    c.v = e.v;
    out.entries_.push_back(std::move(c));
  }
  out.step_ = step_;
  return out;
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step());
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& e : store.entries()) {
    auto& p = e.param.mutable_value().values;
    const auto& g = e.param.grad().values;
    for (std::size_t i = 0; i < p.size(); ++i) {
      e.m.values[i] = cfg.beta1 * e.m.values[i] + (1.0 - cfg.beta1) * g[i];
      e.v.values[i] = cfg.beta2 * e.v.values[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = e.m.values[i] / bc1;
      const double v_hat = e.v.values[i] / bc2;
      p[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

struct Initializer::Impl {
  explicit Impl(std::uint64_t seed) : rng(seed) {}
  Rng rng;
};

Initializer::Initializer(std::uint64_t seed) : impl_(std::make_unique<Impl>(seed)) {}
Initializer::~Initializer() = default;

Tensor Initializer::xavier(std::size_t fan_in, std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros({fan_in, fan_out});
  for (auto& v : t.values) v = impl_->rng.uniform(-a, a);
  return t;
}

Tensor Initializer::normal(Shape shape, double stddev) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.values) v = impl_->rng.normal(0.0, stddev);
  return t;
}

}  // namespace t4c::nd
