#include "daclora/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

namespace dac {

namespace {

using detail::GradMap;
using detail::NodePtr;
using detail::TensorNode;

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

// Gradient accumulator for one node, zero-initialized on first touch.
std::vector<double>& grad_slot(GradMap& sink, const TensorNode* node) {
  auto& slot = sink[node];
  if (slot.empty()) slot.assign(node->values.size(), 0.0);
  return slot;
}

Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<NodePtr> parents,
                   std::function<void(const std::vector<double>&, GradMap&)> backprop) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  for (const auto& p : parents) {
    if (p->requires_grad) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* who) {
  if (!t.defined()) throw StateError(std::string(who) + ": undefined tensor");
}

void require_matrix(const Tensor& t, const char* who) {
  require_defined(t, who);
  if (!t.is_matrix())
    throw ShapeError(std::string(who) + ": expected a 2-d tensor, got shape " +
                     shape_str(t.shape()));
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  s += ")";
  return s;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("Tensor: zero-sized dimension in " + shape_str(shape));
  }
  if (shape.empty()) throw ShapeError("Tensor: rank-0 shapes are not supported");
  if (shape_numel(shape) != values.size())
    throw ShapeError("Tensor: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  node_ = make_leaf(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), 0.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  require_defined(*this, "Tensor::shape");
  return node_->shape;
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

bool Tensor::is_matrix() const { return shape().size() == 2; }

std::size_t Tensor::rows() const {
  require_matrix(*this, "Tensor::rows");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require_matrix(*this, "Tensor::cols");
  return node_->shape[1];
}

const std::vector<double>& Tensor::values() const {
  require_defined(*this, "Tensor::values");
  return node_->values;
}

double Tensor::value() const {
  require_defined(*this, "Tensor::value");
  if (node_->values.size() != 1)
    throw ShapeError("Tensor::value: tensor of shape " + shape_str(node_->shape) +
                     " is not a scalar");
  return node_->values[0];
}

double Tensor::at(std::size_t i) const {
  require_defined(*this, "Tensor::at");
  if (i >= node_->values.size()) throw ShapeError("Tensor::at: index out of range");
  return node_->values[i];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  require_matrix(*this, "Tensor::at");
  if (r >= node_->shape[0] || c >= node_->shape[1])
    throw ShapeError("Tensor::at: index out of range");
  return node_->values[r * node_->shape[1] + c];
}

bool Tensor::requires_grad() const {
  require_defined(*this, "Tensor::requires_grad");
  return node_->requires_grad;
}

void Tensor::set_requires_grad(bool flag) {
  require_defined(*this, "Tensor::set_requires_grad");
  if (!node_->parents.empty())
    throw StateError("Tensor::set_requires_grad: only leaves can be re-flagged");
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const {
  require_defined(*this, "Tensor::has_grad");
  return node_->grad.has_value();
}

const std::vector<double>& Tensor::grad() const {
  require_defined(*this, "Tensor::grad");
  if (!node_->grad) throw StateError("Tensor::grad: no gradient populated");
  return *node_->grad;
}

void Tensor::clear_grad() {
  require_defined(*this, "Tensor::clear_grad");
  node_->grad.reset();
}

std::vector<double>& Tensor::mutable_values() {
  require_defined(*this, "Tensor::mutable_values");
  if (!node_->parents.empty())
    throw StateError("Tensor::mutable_values: op results are immutable");
  return node_->values;
}

Tensor Tensor::detached_copy(bool requires_grad) const {
  require_defined(*this, "Tensor::detached_copy");
  return Tensor(node_->shape, node_->values, requires_grad);
}

const detail::NodePtr& Tensor::node() const {
  require_defined(*this, "Tensor::node");
  return node_;
}

// --- matmul -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double aij = av[i * k + j];
      if (aij == 0.0) continue;
      const double* brow = &bv[j * n];
      double* orow = &out[i * n];
      for (std::size_t l = 0; l < n; ++l) orow[l] += aij * brow[l];
    }
  }
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  auto backprop = [an, bn, m, k, n](const std::vector<double>& g, GradMap& sink) {
    if (an->requires_grad) {
      auto& da = grad_slot(sink, an);  // g (m x n) * b^T -> (m x k)
      const auto& bv = bn->values;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          double acc = 0.0;
          const double* grow = &g[i * n];
          const double* brow = &bv[j * n];
          for (std::size_t l = 0; l < n; ++l) acc += grow[l] * brow[l];
          da[i * k + j] += acc;
        }
    }
    if (bn->requires_grad) {
      auto& db = grad_slot(sink, bn);  // a^T * g -> (k x n)
      const auto& av = an->values;
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g[i * n];
        for (std::size_t j = 0; j < k; ++j) {
          const double aij = av[i * k + j];
          if (aij == 0.0) continue;
          double* drow = &db[j * n];
          for (std::size_t l = 0; l < n; ++l) drow[l] += aij * grow[l];
        }
      }
    }
  };
  return make_result({m, n}, std::move(out), {a.node(), b.node()}, std::move(backprop));
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (k != b.cols())
    throw ShapeError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()) + " transposed");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &av[i * k];
    for (std::size_t l = 0; l < n; ++l) {
      const double* brow = &bv[l * k];
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += arow[j] * brow[j];
      out[i * n + l] = acc;
    }
  }
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  auto backprop = [an, bn, m, k, n](const std::vector<double>& g, GradMap& sink) {
    if (an->requires_grad) {
      auto& da = grad_slot(sink, an);  // g (m x n) * b (n x k)
      const auto& bv = bn->values;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < n; ++l) {
          const double gil = g[i * n + l];
          if (gil == 0.0) continue;
          const double* brow = &bv[l * k];
          double* drow = &da[i * k];
          for (std::size_t j = 0; j < k; ++j) drow[j] += gil * brow[j];
        }
    }
    if (bn->requires_grad) {
      auto& db = grad_slot(sink, bn);  // g^T (n x m) * a (m x k)
      const auto& av = an->values;
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = &av[i * k];
        for (std::size_t l = 0; l < n; ++l) {
          const double gil = g[i * n + l];
          if (gil == 0.0) continue;
          double* drow = &db[l * k];
          for (std::size_t j = 0; j < k; ++j) drow[j] += gil * arow[j];
        }
      }
    }
  };
  return make_result({m, n}, std::move(out), {a.node(), b.node()}, std::move(backprop));
}

// --- elementwise ----------------------------------------------------------

namespace {

enum class BinKind { kAdd, kSub, kMul };

// Equal shapes or a one-element tensor on either side; nothing fancier, so
// every backward rule below stays a direct loop.
Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
  require_defined(a, name);
  require_defined(b, name);
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (!(a.shape() == b.shape() || a_scalar || b_scalar))
    throw ShapeError(std::string(name) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not broadcast-compatible");
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t n = std::max(av.size(), bv.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[a_scalar ? 0 : i];
    const double y = bv[b_scalar ? 0 : i];
    out[i] = kind == BinKind::kAdd ? x + y : kind == BinKind::kSub ? x - y : x * y;
  }
  Shape out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  auto backprop = [an, bn, a_scalar, b_scalar, kind, n](const std::vector<double>& g,
                                                        GradMap& sink) {
    if (an->requires_grad) {
      auto& da = grad_slot(sink, an);
      for (std::size_t i = 0; i < n; ++i) {
        double contrib = g[i];
        if (kind == BinKind::kMul) contrib *= bn->values[b_scalar ? 0 : i];
        da[a_scalar ? 0 : i] += contrib;
      }
    }
    if (bn->requires_grad) {
      auto& db = grad_slot(sink, bn);
      for (std::size_t i = 0; i < n; ++i) {
        double contrib = g[i];
        if (kind == BinKind::kSub) contrib = -contrib;
        if (kind == BinKind::kMul) contrib = g[i] * an->values[a_scalar ? 0 : i];
        db[b_scalar ? 0 : i] += contrib;
      }
    }
  };
  return make_result(std::move(out_shape), std::move(out), {a.node(), b.node()},
                     std::move(backprop));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::kMul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  std::vector<double> out(a.values());
  for (double& v : out) v *= factor;
  TensorNode* an = a.node().get();
  auto backprop = [an, factor](const std::vector<double>& g, GradMap& sink) {
    auto& da = grad_slot(sink, an);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += factor * g[i];
  };
  return make_result(a.shape(), std::move(out), {a.node()}, std::move(backprop));
}

Tensor relu(const Tensor& a) {
  require_defined(a, "relu");
  std::vector<double> out(a.values());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  TensorNode* an = a.node().get();
  auto backprop = [an](const std::vector<double>& g, GradMap& sink) {
    auto& da = grad_slot(sink, an);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (an->values[i] > 0.0) da[i] += g[i];
  };
  return make_result(a.shape(), std::move(out), {a.node()}, std::move(backprop));
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  require_defined(a, "clamp");
  if (!(lo < hi)) throw InputError("clamp: lo must be strictly below hi");
  std::vector<double> out(a.values());
  for (double& v : out) v = std::min(hi, std::max(lo, v));
  TensorNode* an = a.node().get();
  // Gradient passes only strictly inside the interval; at the clamp
  // boundary the subgradient chosen is 0.
  auto backprop = [an, lo, hi](const std::vector<double>& g, GradMap& sink) {
    auto& da = grad_slot(sink, an);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = an->values[i];
      if (v > lo && v < hi) da[i] += g[i];
    }
  };
  return make_result(a.shape(), std::move(out), {a.node()}, std::move(backprop));
}

// --- losses and reductions ------------------------------------------------

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_matrix(logits, "cross_entropy");
  const std::size_t b = logits.rows(), c = logits.cols();
  if (c < 2) throw InputError("cross_entropy: need at least 2 classes");
  if (labels.size() != b)
    throw InputError("cross_entropy: got " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(b) + " rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw InputError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(c) + ")");
  const auto& lv = logits.values();
  std::vector<double> probs(b * c);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = &lv[i * c];
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - m);
      sum += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= sum;
    total += (m + std::log(sum)) - row[static_cast<std::size_t>(labels[i])];
  }
  TensorNode* ln = logits.node().get();
  auto backprop = [ln, probs, labels, b, c](const std::vector<double>& g, GradMap& sink) {
    auto& dl = grad_slot(sink, ln);
    const double s = g[0] / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        double p = probs[i * c + j];
        if (j == static_cast<std::size_t>(labels[i])) p -= 1.0;
        dl[i * c + j] += s * p;
      }
  };
  return make_result({1}, {total / static_cast<double>(b)}, {logits.node()},
                     std::move(backprop));
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
  require_matrix(u, "cosine_similarity");
  require_matrix(v, "cosine_similarity");
  if (u.shape() != v.shape())
    throw ShapeError("cosine_similarity: shapes " + shape_str(u.shape()) + " and " +
                     shape_str(v.shape()) + " differ");
  const std::size_t b = u.rows(), d = u.cols();
  const auto& uv = u.values();
  const auto& vv = v.values();
  std::vector<double> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double* ur = &uv[i * d];
    const double* vr = &vv[i * d];
    double uu = 0.0, ww = 0.0, dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      uu += ur[j] * ur[j];
      ww += vr[j] * vr[j];
      dot += ur[j] * vr[j];
    }
    if (uu == 0.0 || ww == 0.0)
      throw NumericalError("cosine_similarity: zero-norm row " + std::to_string(i));
    out[i] = dot / (std::sqrt(uu) * std::sqrt(ww));
  }
  TensorNode* un = u.node().get();
  TensorNode* vn = v.node().get();
  auto backprop = [un, vn, b, d](const std::vector<double>& g, GradMap& sink) {
    // d cos / d u = v / (|u||v|) - cos * u / |u|^2, and symmetrically for v.
    for (std::size_t i = 0; i < b; ++i) {
      const double* ur = &un->values[i * d];
      const double* vr = &vn->values[i * d];
      double uu = 0.0, ww = 0.0, dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        uu += ur[j] * ur[j];
        ww += vr[j] * vr[j];
        dot += ur[j] * vr[j];
      }
      const double nu = std::sqrt(uu), nv = std::sqrt(ww);
      const double cos_i = dot / (nu * nv);
      if (un->requires_grad) {
        auto& du = grad_slot(sink, un);
        for (std::size_t j = 0; j < d; ++j)
          du[i * d + j] += g[i] * (vr[j] / (nu * nv) - cos_i * ur[j] / uu);
      }
      if (vn->requires_grad) {
        auto& dv = grad_slot(sink, vn);
        for (std::size_t j = 0; j < d; ++j)
          dv[i * d + j] += g[i] * (ur[j] / (nu * nv) - cos_i * vr[j] / ww);
      }
    }
  };
  return make_result({b}, std::move(out), {u.node(), v.node()}, std::move(backprop));
}

Tensor rows_l2_normalize(const Tensor& a) {
  require_matrix(a, "rows_l2_normalize");
  const std::size_t b = a.rows(), d = a.cols();
  const auto& av = a.values();
  std::vector<double> out(b * d);
  std::vector<double> norms(b);
  for (std::size_t i = 0; i < b; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += av[i * d + j] * av[i * d + j];
    if (ss == 0.0)
      throw NumericalError("rows_l2_normalize: zero-norm row " + std::to_string(i));
    norms[i] = std::sqrt(ss);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = av[i * d + j] / norms[i];
  }
  TensorNode* an = a.node().get();
  auto backprop = [an, norms, out, b, d](const std::vector<double>& g, GradMap& sink) {
    // y = x / |x|  =>  dx = (g - y <g, y>) / |x|
    auto& da = grad_slot(sink, an);
    for (std::size_t i = 0; i < b; ++i) {
      const double* yr = &out[i * d];
      const double* gr = &g[i * d];
      double gy = 0.0;
      for (std::size_t j = 0; j < d; ++j) gy += gr[j] * yr[j];
      for (std::size_t j = 0; j < d; ++j)
        da[i * d + j] += (gr[j] - yr[j] * gy) / norms[i];
    }
  };
  return make_result(a.shape(), std::move(out), {a.node()}, std::move(backprop));
}

Tensor sum_all(const Tensor& a) {
  require_defined(a, "sum_all");
  double total = 0.0;
  for (double v : a.values()) total += v;
  TensorNode* an = a.node().get();
  auto backprop = [an](const std::vector<double>& g, GradMap& sink) {
    auto& da = grad_slot(sink, an);
    for (double& v : da) v += g[0];
  };
  return make_result({1}, {total}, {a.node()}, std::move(backprop));
}

Tensor mean_all(const Tensor& a) {
  require_defined(a, "mean_all");
  const double n = static_cast<double>(a.numel());
  double total = 0.0;
  for (double v : a.values()) total += v;
  TensorNode* an = a.node().get();
  auto backprop = [an, n](const std::vector<double>& g, GradMap& sink) {
    auto& da = grad_slot(sink, an);
    for (double& v : da) v += g[0] / n;
  };
  return make_result({1}, {total / n}, {a.node()}, std::move(backprop));
}

double l1_norm(const Tensor& a) {
  require_defined(a, "l1_norm");
  double total = 0.0;
  for (double v : a.values()) total += std::abs(v);
  return total;
}

// --- backward ---------------------------------------------------------

void backward(const Tensor& loss, const std::vector<Tensor>& leaves) {
  require_defined(loss, "backward");
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_str(loss.shape()));
  // Reverse-topological order over the requires_grad subgraph: iterative
  // post-order DFS (parents first), then walked back to front so every
  // node's output gradient is complete before its backprop runs.
  std::vector<const TensorNode*> post_order;
  if (loss.node()->requires_grad) {
    std::unordered_set<const TensorNode*> visited;
    std::vector<std::pair<const TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
      const auto [node, next] = stack.back();
      if (next < node->parents.size()) {
        ++stack.back().second;
        const TensorNode* p = node->parents[next].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        post_order.push_back(node);
        stack.pop_back();
      }
    }
  }

  GradMap grads;
  grads[loss.node().get()] = {1.0};
  for (auto it = post_order.rbegin(); it != post_order.rend(); ++it) {
    const TensorNode* node = *it;
    if (!node->backprop) continue;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    node->backprop(found->second, grads);
  }

  for (const Tensor& leaf : leaves) {
    require_defined(leaf, "backward");
    auto found = grads.find(leaf.node().get());
    if (found == grads.end())
      throw GraphError("backward: leaf of shape " + shape_str(leaf.shape()) +
                       " is not reachable from the loss");
    leaf.node()->grad = found->second;
  }
}

// --- helpers ----------------------------------------------------------

Tensor row_leaf(const Tensor& batch, std::size_t r, bool requires_grad) {
  require_matrix(batch, "row_leaf");
  if (r >= batch.rows()) throw ShapeError("row_leaf: row index out of range");
  const std::size_t d = batch.cols();
  const auto& v = batch.values();
  std::vector<double> row(v.begin() + r * d, v.begin() + (r + 1) * d);
  return Tensor({1, d}, std::move(row), requires_grad);
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw InputError("stack_rows: no rows given");
  const std::size_t d = rows.front().numel();
  std::vector<double> out;
  out.reserve(rows.size() * d);
  for (const Tensor& r : rows) {
    if (r.numel() != d)
      throw ShapeError("stack_rows: inconsistent row widths");
    out.insert(out.end(), r.values().begin(), r.values().end());
  }
  return Tensor({rows.size(), d}, std::move(out));
}

}  // namespace dac
