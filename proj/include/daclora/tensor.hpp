#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "daclora/errors.hpp"

namespace dac {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// Scratch gradients keyed by node while a backward pass runs. Only the
// leaves requested by the caller get their grad slot written at the end,
// so attacks can differentiate w.r.t. inputs without touching parameters.
using GradMap = std::unordered_map<const TensorNode*, std::vector<double>>;

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::optional<std::vector<double>> grad;
  bool requires_grad = false;
  // parents + backprop form the recorded tape entry for the op that
  // produced this node; both stay empty on leaves and on results that do
  // not need gradient.
  std::vector<NodePtr> parents;
  std::function<void(const std::vector<double>&, GradMap&)> backprop;
};

}  // namespace detail

// Dense row-major tensor of 64-bit floats. Copying a Tensor copies a handle;
// the underlying node is shared. Ops never mutate their inputs: each op
// allocates a fresh node and links it to the operand nodes, which is the
// dynamic tape replayed in reverse by backward().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  bool is_matrix() const;
  std::size_t rows() const;
  std::size_t cols() const;

  const std::vector<double>& values() const;
  double value() const;  // scalar tensors only
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);  // leaves only
  bool has_grad() const;
  const std::vector<double>& grad() const;
  void clear_grad();

  // Direct write access for optimizer updates; rejected on op results so
  // recorded graphs stay immutable.
  std::vector<double>& mutable_values();

  // Fresh leaf with the same values; drops any graph history.
  Tensor detached_copy(bool requires_grad = false) const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Internal handle used by the op implementations.
  const detail::NodePtr& node() const;
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

 private:
  detail::NodePtr node_;
};

// --- recorded ops -----------------------------------------------------

// a (m x k) times b (k x n) -> (m x n)
Tensor matmul(const Tensor& a, const Tensor& b);
// a (m x k) times b^T where b is (n x k) -> (m x n); the layout every
// linear layer wants, without materializing a transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Elementwise; binary ops accept equal shapes or a scalar on one side.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

// Mean softmax cross-entropy over rows, stable log-sum-exp inside.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Row-wise cosine between matching rows of u and v -> shape {B}.
// Zero-norm rows raise NumericalError rather than being fudged.
Tensor cosine_similarity(const Tensor& u, const Tensor& v);

// Rows scaled to unit L2 norm; zero rows raise NumericalError.
Tensor rows_l2_normalize(const Tensor& a);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Plain reduction, not recorded: sum of |v| over all entries.
double l1_norm(const Tensor& a);

// Reverse pass from a scalar loss. Writes (overwrites) the grad slot of
// exactly the listed leaves; every other node, frozen parameters included,
// is left untouched. Throws GraphError if a leaf is not reachable.
void backward(const Tensor& loss, const std::vector<Tensor>& leaves);

// --- non-recorded helpers ----------------------------------------------

// Copy of row r as a fresh (1 x cols) leaf.
Tensor row_leaf(const Tensor& batch, std::size_t r, bool requires_grad = false);
// Stack (1 x d) rows into a fresh (n x d) leaf.
Tensor stack_rows(const std::vector<Tensor>& rows);

}  // namespace dac
