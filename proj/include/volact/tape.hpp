#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "volact/param_store.hpp"

namespace volact {

/// Dense layer y = W x + b; W is a row-major out x in block of the ParamStore.
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight = 0;  // offset of W
  std::size_t bias = 0;    // offset of b
};

namespace detail {

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMutMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using VecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMutMap = Eigen::Map<Eigen::VectorXd>;

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

/// Reverse-mode record of a vector-valued computation.
///
/// Nodes operate on whole activation vectors (layer granularity). Values and
/// adjoints live in two flat arenas that are reused across reset() calls, so a
/// tape recycled per sample does not allocate after warm-up.
class Tape {
 public:
  using Slot = int;

  enum class Op { Input, Param, Affine, Relu, Softplus, Sigmoid, Square, Sum, Softmax, Concat, Slice };

  explicit Tape(const ParamStore* params = nullptr) : params_(params) {}

  void reset(const ParamStore& params) {
    params_ = &params;
    nodes_.clear();
    values_.clear();
  }

  void reset() {
    nodes_.clear();
    values_.clear();
  }

  std::size_t node_count() const { return nodes_.size(); }

  Slot input(std::span<const double> x) {
    const Slot s = push(Op::Input, -1, -1, x.size());
    std::copy(x.begin(), x.end(), values_.begin() + static_cast<std::ptrdiff_t>(nodes_[s].offset));
    return s;
  }

  /// Leaf whose value is a parameter block; its adjoint flows to the gradient buffer.
  Slot parameter(const LayoutEntry& entry) {
    const Slot s = push(Op::Param, -1, -1, entry.size());
    nodes_[s].p0 = entry.offset;
    compute(nodes_[s]);
    return s;
  }

  Slot affine(Slot x, const DenseLayer& layer) {
    assert(nodes_[x].size == layer.in);
    const Slot s = push(Op::Affine, x, -1, layer.out);
    nodes_[s].p0 = layer.weight;
    nodes_[s].p1 = layer.bias;
    compute(nodes_[s]);
    return s;
  }

  Slot relu(Slot x) { return unary(Op::Relu, x); }
  Slot softplus(Slot x) { return unary(Op::Softplus, x); }
  Slot sigmoid(Slot x) { return unary(Op::Sigmoid, x); }
  Slot square(Slot x) { return unary(Op::Square, x); }
  Slot softmax(Slot x) { return unary(Op::Softmax, x); }

  Slot sum(Slot x) {
    const Slot s = push(Op::Sum, x, -1, 1);
    compute(nodes_[s]);
    return s;
  }

  Slot concat(Slot a, Slot b) {
    const Slot s = push(Op::Concat, a, b, nodes_[a].size + nodes_[b].size);
    compute(nodes_[s]);
    return s;
  }

  Slot slice(Slot x, std::size_t begin, std::size_t n) {
    assert(begin + n <= nodes_[x].size);
    const Slot s = push(Op::Slice, x, -1, n);
    nodes_[s].aux = begin;
    compute(nodes_[s]);
    return s;
  }

  std::span<const double> value(Slot s) const {
    return std::span(values_).subspan(nodes_[s].offset, nodes_[s].size);
  }

  double scalar(Slot s) const { return values_[nodes_[s].offset]; }

  /// Clears adjoints; call before seeding.
  void zero_adjoints() {
    adjoints_.assign(values_.size(), 0.0);
  }

  void seed(Slot s, std::span<const double> g) {
    if (adjoints_.size() != values_.size()) zero_adjoints();
    const auto& n = nodes_[s];
    assert(g.size() == n.size);
    for (std::size_t i = 0; i < n.size; ++i) adjoints_[n.offset + i] += g[i];
  }

  /// Propagates seeded adjoints in reverse recording order, accumulating into
  /// `param_grads` (indexed like ParamStore::values()).
  void backpropagate(std::span<double> param_grads) {
    if (adjoints_.size() != values_.size()) zero_adjoints();
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) reverse(*it, param_grads);
  }

  /// Convenience: zero, seed one output, backpropagate.
  void backward(Slot out, std::span<const double> seed_values, std::span<double> param_grads) {
    zero_adjoints();
    seed(out, seed_values);
    backpropagate(param_grads);
  }

  std::span<const double> adjoint(Slot s) const {
    return std::span(adjoints_).subspan(nodes_[s].offset, nodes_[s].size);
  }

  /// Recomputes every non-leaf node from the recorded leaves into a fresh
  /// arena; returns it for comparison against the recorded values.
  std::vector<double> replay() const {
    Tape copy = *this;
    for (auto& n : copy.nodes_)
      if (n.op != Op::Input) copy.compute(n);
    return copy.values_;
  }

  const std::vector<double>& recorded_values() const { return values_; }

 private:
  struct Node {
    Op op = Op::Input;
    Slot a = -1;
    Slot b = -1;
    std::size_t offset = 0;
    std::size_t size = 0;
    std::size_t p0 = 0;
    std::size_t p1 = 0;
    std::size_t aux = 0;
  };

  Slot push(Op op, Slot a, Slot b, std::size_t size) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.offset = values_.size();
    n.size = size;
    values_.resize(values_.size() + size);
    nodes_.push_back(n);
    return static_cast<Slot>(nodes_.size() - 1);
  }

  Slot unary(Op op, Slot x) {
    const Slot s = push(op, x, -1, nodes_[x].size);
    compute(nodes_[s]);
    return s;
  }

  void compute(const Node& n) {
    double* y = values_.data() + n.offset;
    const double* x = n.a >= 0 ? values_.data() + nodes_[n.a].offset : nullptr;
    const double* theta = params_ ? params_->values().data() : nullptr;
    switch (n.op) {
      case Op::Input:
        break;
      case Op::Param:
        std::copy(theta + n.p0, theta + n.p0 + n.size, y);
        break;
      case Op::Affine: {
        const std::size_t in = nodes_[n.a].size;
        detail::RowMajorMap w(theta + n.p0, static_cast<Eigen::Index>(n.size), static_cast<Eigen::Index>(in));
        detail::VecMutMap out(y, static_cast<Eigen::Index>(n.size));
        out.noalias() = w * detail::VecMap(x, static_cast<Eigen::Index>(in));
        out += detail::VecMap(theta + n.p1, static_cast<Eigen::Index>(n.size));
        break;
      }
      case Op::Relu:
        for (std::size_t i = 0; i < n.size; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
        break;
      case Op::Softplus:
        for (std::size_t i = 0; i < n.size; ++i) y[i] = detail::softplus(x[i]);
        break;
      case Op::Sigmoid:
        for (std::size_t i = 0; i < n.size; ++i) y[i] = detail::sigmoid(x[i]);
        break;
      case Op::Square:
        for (std::size_t i = 0; i < n.size; ++i) y[i] = x[i] * x[i];
        break;
      case Op::Sum: {
        double acc = 0.0;
        for (std::size_t i = 0; i < nodes_[n.a].size; ++i) acc += x[i];
        y[0] = acc;
        break;
      }
      case Op::Softmax: {
        const double m = *std::max_element(x, x + n.size);
        double z = 0.0;
        for (std::size_t i = 0; i < n.size; ++i) z += (y[i] = std::exp(x[i] - m));
        for (std::size_t i = 0; i < n.size; ++i) y[i] /= z;
        break;
      }
      case Op::Concat: {
        const auto& na = nodes_[n.a];
        const auto& nb = nodes_[n.b];
        std::copy_n(values_.data() + na.offset, na.size, y);
        std::copy_n(values_.data() + nb.offset, nb.size, y + na.size);
        break;
      }
      case Op::Slice:
        std::copy_n(x + n.aux, n.size, y);
        break;
    }
  }

  void reverse(const Node& n, std::span<double> grads) {
    const double* gy = adjoints_.data() + n.offset;
    const double* y = values_.data() + n.offset;
    double* gx = n.a >= 0 ? adjoints_.data() + nodes_[n.a].offset : nullptr;
    const double* x = n.a >= 0 ? values_.data() + nodes_[n.a].offset : nullptr;
    switch (n.op) {
      case Op::Input:
        break;
      case Op::Param:
        for (std::size_t i = 0; i < n.size; ++i) grads[n.p0 + i] += gy[i];
        break;
      case Op::Affine: {
        const std::size_t in = nodes_[n.a].size;
        const auto rows = static_cast<Eigen::Index>(n.size);
        const auto cols = static_cast<Eigen::Index>(in);
        const double* theta = params_->values().data();
        detail::VecMap g(gy, rows);
        detail::VecMap xin(x, cols);
        detail::VecMutMap(gx, cols).noalias() += detail::RowMajorMap(theta + n.p0, rows, cols).transpose() * g;
        detail::RowMajorMutMap(grads.data() + n.p0, rows, cols).noalias() += g * xin.transpose();
        detail::VecMutMap(grads.data() + n.p1, rows) += g;
        break;
      }
      case Op::Relu:
        for (std::size_t i = 0; i < n.size; ++i)
          if (x[i] > 0.0) gx[i] += gy[i];
        break;
      case Op::Softplus:
        for (std::size_t i = 0; i < n.size; ++i) gx[i] += gy[i] * detail::sigmoid(x[i]);
        break;
      case Op::Sigmoid:
        for (std::size_t i = 0; i < n.size; ++i) gx[i] += gy[i] * y[i] * (1.0 - y[i]);
        break;
      case Op::Square:
        for (std::size_t i = 0; i < n.size; ++i) gx[i] += 2.0 * x[i] * gy[i];
        break;
      case Op::Sum:
        for (std::size_t i = 0; i < nodes_[n.a].size; ++i) gx[i] += gy[0];
        break;
      case Op::Softmax: {
        double dot = 0.0;
        for (std::size_t i = 0; i < n.size; ++i) dot += gy[i] * y[i];
        for (std::size_t i = 0; i < n.size; ++i) gx[i] += y[i] * (gy[i] - dot);
        break;
      }
      case Op::Concat: {
        const auto& na = nodes_[n.a];
        const auto& nb = nodes_[n.b];
        double* ga = adjoints_.data() + na.offset;
        double* gb = adjoints_.data() + nb.offset;
        for (std::size_t i = 0; i < na.size; ++i) ga[i] += gy[i];
        for (std::size_t i = 0; i < nb.size; ++i) gb[i] += gy[na.size + i];
        break;
      }
      case Op::Slice:
        for (std::size_t i = 0; i < n.size; ++i) gx[n.aux + i] += gy[i];
        break;
    }
  }

  const ParamStore* params_ = nullptr;
  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> adjoints_;
};

}  // namespace volact
