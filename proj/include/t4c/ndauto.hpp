#pragma once

// Minimal dense reverse-mode autodiff: 64-bit row-major tensors, a dynamic tape built
// during the forward pass, and the handful of layers the traffic model needs.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace t4c::nd {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v);
  static Tensor zeros(Shape s);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  /// 2-D convenience constructor from nested rows.
  static Tensor matrix(const std::vector<std::vector<double>>& rows);

  std::size_t size() const { return values.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols(), cols()}; }

  bool operator==(const Tensor&) const = default;
};

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // reads this->grad, accumulates into parents

  void accumulate(std::span<const double> g);
  Tensor& ensure_grad();
};

/// Handle to a tape node. Cheap to copy; copies alias the same node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  /// Gradient buffer; zeros of the value's shape if nothing was accumulated yet.
  const Tensor& grad() const { return node_->ensure_grad(); }
  void zero_grad() const;
  bool requires_grad() const { return node_->requires_grad; }
  double item() const;
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor t);
Var parameter(Tensor t);

/// Reverse sweep from a scalar root; gradients accumulate into every reachable leaf parameter.
void backward(const Var& root);

// ---- primitives -------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
/// x: N x F, bias: F (or 1 x F), broadcast over rows.
Var add_bias(const Var& x, const Var& bias);
Var relu(const Var& x);
Var scale(const Var& x, double factor);
/// Column-wise concatenation of 2-D tensors with equal row counts.
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
/// Rows of table (V x D) selected by indices; out-of-range indices throw.
Var embedding_lookup(const Var& table, std::span<const int> indices);
/// Row-wise numerically stabilised softmax.
Var softmax_rows(const Var& x);

/// Sorted neighbor lists over dense node indices.
using Adjacency = std::vector<std::vector<std::size_t>>;

/// out[i] = mean of x[j] over j in adj[i]; isolated rows aggregate to zero.
Var mean_neighbor_aggregate(const Var& x, const Adjacency& adj);

inline Var linear(const Var& x, const Var& weight, const Var& bias) { return add_bias(matmul(x, weight), bias); }

// ---- losses -----------------------------------------------------------------------------

inline constexpr int kMasked = -1;

struct LossValue {
  Var loss;               // scalar
  std::size_t count = 0;  // unmasked rows
  bool all_masked() const { return count == 0; }
};

/// Mean over unmasked rows of w[y] * -log softmax(logits)[y]; labels use kMasked to skip rows.
LossValue weighted_cross_entropy(const Var& logits, std::span<const int> labels, std::span<const double> class_weights);

/// Mean squared error over entries where mask is true.
LossValue mse(const Var& pred, std::span<const double> target, std::span<const std::uint8_t> mask);

// ---- parameters and optimizer -------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var param;
    Tensor m;
    Tensor v;
  };

  Var add(const std::string& name, Tensor init);
  Var get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }
  std::size_t num_scalars() const;

  void zero_grad();
  /// Deep copy: fresh nodes with identical values and moments.
  ParamStore clone() const;

 private:
  std::vector<Entry> entries_;
  std::int64_t step_ = 0;
};

void adam_step(ParamStore& store, const AdamConfig& cfg);

// ---- initialisers -------------------------------------------------------------------------

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed);
  ~Initializer();
  Initializer(const Initializer&) = delete;
  Initializer& operator=(const Initializer&) = delete;

  /// uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)).
  Tensor xavier(std::size_t fan_in, std::size_t fan_out);
  Tensor normal(Shape shape, double stddev);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace t4c::nd
