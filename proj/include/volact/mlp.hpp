#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "volact/param_store.hpp"
#include "volact/rng.hpp"
#include "volact/tape.hpp"

namespace volact {

/// ReLU multilayer perceptron: `depth` hidden layers of `width` units and a
/// linear output layer. An optional skip layer re-injects the network input,
/// concatenated after the previous activation.
class Mlp {
 public:
  struct Shape {
    std::size_t in = 0;
    std::size_t depth = 0;
    std::size_t width = 0;
    std::size_t out = 0;
    std::optional<std::size_t> skip;
  };

  struct Outputs {
    Tape::Slot hidden = -1;  // last hidden activation (post-ReLU); input when depth == 0
    Tape::Slot output = -1;
  };

  Mlp() = default;

  Mlp(ParamStore& store, const std::string& name, const Shape& shape) : shape_(shape) {
    std::size_t prev = shape.in;
    for (std::size_t i = 0; i <= shape.depth; ++i) {
      const bool last = i == shape.depth;
      std::size_t in = prev;
      if (!last && shape.skip && *shape.skip == i && i > 0) in += shape.in;
      const std::size_t out = last ? shape.out : shape.width;
      const std::string prefix = name + "." + std::to_string(i);
      DenseLayer layer;
      layer.in = in;
      layer.out = out;
      layer.weight = store.add(prefix + ".weight", out, in).offset;
      layer.bias = store.add(prefix + ".bias", out, 1).offset;
      layers_.push_back(layer);
      prev = out;
    }
  }

  const Shape& shape() const { return shape_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  const DenseLayer& output_layer() const { return layers_.back(); }
  std::size_t in_dim() const { return shape_.in; }
  std::size_t out_dim() const { return shape_.out; }
  std::size_t hidden_dim() const { return shape_.depth > 0 ? shape_.width : shape_.in; }

  /// Uniform He-style initialization for all layers; biases zero.
  void init(ParamStore& store, Rng& rng, double scale = 1.0) const {
    auto v = store.values();
    for (const auto& layer : layers_) {
      const double bound = scale * std::sqrt(6.0 / static_cast<double>(layer.in));
      for (std::size_t k = 0; k < layer.in * layer.out; ++k) v[layer.weight + k] = rng.uniform(-bound, bound);
      for (std::size_t k = 0; k < layer.out; ++k) v[layer.bias + k] = 0.0;
    }
  }

  void zero_output(ParamStore& store, double bias = 0.0) const {
    auto v = store.values();
    const auto& last = layers_.back();
    for (std::size_t k = 0; k < last.in * last.out; ++k) v[last.weight + k] = 0.0;
    for (std::size_t k = 0; k < last.out; ++k) v[last.bias + k] = bias;
  }

  Outputs record(Tape& tape, Tape::Slot input) const {
    Tape::Slot h = input;
    for (std::size_t i = 0; i < shape_.depth; ++i) {
      Tape::Slot x = h;
      if (shape_.skip && *shape_.skip == i && i > 0) x = tape.concat(h, input);
      h = tape.relu(tape.affine(x, layers_[i]));
    }
    return {h, tape.affine(h, layers_.back())};
  }

  /// Forward mode: `in` holds the input in column 0 and tangents in the other
  /// columns; writes the output (column 0) and output tangents to `out`.
  void forward_jvp(std::span<const double> params, const Eigen::MatrixXd& in, Eigen::MatrixXd& out) const {
    thread_local Eigen::MatrixXd a, b, cat;
    const auto cols = in.cols();
    const double* theta = params.data();
    const Eigen::MatrixXd* cur = &in;
    Eigen::MatrixXd* bufs[2] = {&a, &b};
    int which = 0;
    for (std::size_t i = 0; i <= shape_.depth; ++i) {
      const auto& layer = layers_[i];
      const bool last = i == shape_.depth;
      if (!last && shape_.skip && *shape_.skip == i && i > 0) {
        cat.resize(static_cast<Eigen::Index>(layer.in), cols);
        cat.topRows(cur->rows()) = *cur;
        cat.bottomRows(in.rows()) = in;
        cur = &cat;
      }
      Eigen::MatrixXd& dst = last ? out : *bufs[which];
      dst.resize(static_cast<Eigen::Index>(layer.out), cols);
      detail::RowMajorMap w(theta + layer.weight, static_cast<Eigen::Index>(layer.out),
                            static_cast<Eigen::Index>(layer.in));
      dst.noalias() = w * (*cur);
      dst.col(0) += detail::VecMap(theta + layer.bias, static_cast<Eigen::Index>(layer.out));
      if (!last) {
        for (Eigen::Index r = 0; r < dst.rows(); ++r)
          if (!(dst(r, 0) > 0.0)) dst.row(r).setZero();
        cur = &dst;
        which ^= 1;
      }
    }
  }

 private:
  Shape shape_;
  std::vector<DenseLayer> layers_;
};

}  // namespace volact
