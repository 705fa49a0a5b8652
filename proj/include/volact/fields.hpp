#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "volact/encoding.hpp"
#include "volact/errors.hpp"
#include "volact/linalg.hpp"
#include "volact/mlp.hpp"
#include "volact/param_store.hpp"
#include "volact/rng.hpp"
#include "volact/skeleton.hpp"
#include "volact/tape.hpp"

namespace volact {

struct FieldConfig {
  std::size_t skinning_layers = 4;
  std::size_t skinning_width = 128;
  std::size_t delta_layers = 4;
  std::size_t delta_width = 128;
  std::size_t radiance_layers = 8;
  std::size_t radiance_width = 256;
  std::size_t ao_layers = 1;
  std::size_t ao_width = 128;
  std::size_t pe_degree_coords = 4;
  std::size_t ipe_degree = 10;

  void validate() const {
    const std::size_t all[] = {skinning_layers, skinning_width, delta_layers, delta_width, radiance_layers,
                               radiance_width,  ao_layers,      ao_width,     ipe_degree};
    for (auto v : all)
      if (v == 0) throw ConfigError("field config entries must be positive");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FieldConfig, skinning_layers, skinning_width, delta_layers,
                                                delta_width, radiance_layers, radiance_width, ao_layers, ao_width,
                                                pe_degree_coords, ipe_degree)

/// Pose conditioning: per-bone rotation (row-major) and translation with the
/// root transform removed, 12 numbers per bone.
inline std::vector<double> pose_feature(const Pose& pose, std::size_t root) {
  const Pose rel = remove_root(pose, root);
  std::vector<double> out;
  out.reserve(12 * rel.size());
  for (const auto& t : rel.transforms) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out.push_back(t.rotation(r, c));
    for (int r = 0; r < 3; ++r) out.push_back(t.translation(r));
  }
  return out;
}

/// Everything derived from one pose that per-sample queries reuse.
struct PoseContext {
  Pose pose;
  PosedSegments posed;
  std::vector<Transform> inverses;
  std::vector<double> feature;

  PoseContext() = default;
  PoseContext(const Skeleton& skeleton, Pose p) : pose(std::move(p)), posed(skeleton, pose) {
    inverses.reserve(pose.size());
    for (const auto& t : pose.transforms) inverses.push_back(t.inverse());
    feature = pose_feature(pose, skeleton.root());
  }
};

/// Value and 3x3 Jacobian of a map R^3 -> R^3.
struct MapEval {
  Vec3 value = Vec3::Zero();
  Mat3 jacobian = Mat3::Identity();
};

struct RadianceOut {
  Vec3 c = Vec3::Zero();
  double sigma = 0.0;
  std::vector<double> h;
};

inline constexpr double kAoInitLogit = 16.0;

/// The four coordinate networks: skinning weights, non-linear deformation,
/// canonical radiance and pose-conditioned ambient occlusion.
class ActorFields {
 public:
  struct RadianceSlots {
    Tape::Slot input = -1;  // integrated positional encoding
    Tape::Slot hidden = -1;
    Tape::Slot sigma = -1;
    Tape::Slot color = -1;
  };

  ActorFields() = default;

  ActorFields(const FieldConfig& cfg, std::size_t bones, ParamStore& store) : cfg_(cfg), bones_(bones) {
    cfg.validate();
    const std::size_t pe = pe_size(cfg.pe_degree_coords);
    skinning_ = Mlp(store, "skinning", {pe, cfg.skinning_layers, cfg.skinning_width, bones + 1, std::nullopt});
    delta_ = Mlp(store, "delta", {pe + 12 * bones, cfg.delta_layers, cfg.delta_width, 3, std::nullopt});
    radiance_ = Mlp(store, "radiance",
                    {ipe_size(cfg.ipe_degree), cfg.radiance_layers, cfg.radiance_width, 4,
                     cfg.radiance_layers >= 2 ? std::optional<std::size_t>(cfg.radiance_layers / 2) : std::nullopt});
    ao_ = Mlp(store, "ao", {radiance_.hidden_dim() + 12 * bones, cfg.ao_layers, cfg.ao_width, 1, std::nullopt});
  }

  /// Random init; the deformation head starts at zero and the AO head at a ~= 1.
  void init(ParamStore& store, std::uint64_t seed) const {
    Rng rng(seed);
    skinning_.init(store, rng);
    delta_.init(store, rng);
    radiance_.init(store, rng);
    ao_.init(store, rng);
    delta_.zero_output(store);
    ao_.zero_output(store, kAoInitLogit);
  }

  const FieldConfig& config() const { return cfg_; }
  std::size_t bones() const { return bones_; }
  const Mlp& skinning_net() const { return skinning_; }
  const Mlp& delta_net() const { return delta_; }
  const Mlp& radiance_net() const { return radiance_; }
  const Mlp& ao_net() const { return ao_; }

  // Plain evaluation.

  SkinningWeights eval_skinning(const ParamStore& params, const Vec3& x_c) const {
    Tape tape(&params);
    const auto w = record_skinning(tape, x_c);
    auto v = tape.value(w);
    return {v.begin(), v.end()};
  }

  Vec3 eval_delta(const ParamStore& params, const Vec3& x_c, const PoseContext& ctx) const {
    Tape tape(&params);
    auto v = tape.value(record_delta(tape, x_c, ctx));
    return {v[0], v[1], v[2]};
  }

  RadianceOut eval_radiance(const ParamStore& params, const Vec3& x_c, const Vec3& var) const {
    Tape tape(&params);
    const auto s = record_radiance(tape, x_c, var);
    RadianceOut out;
    auto c = tape.value(s.color);
    out.c = Vec3(c[0], c[1], c[2]);
    out.sigma = tape.scalar(s.sigma);
    auto h = tape.value(s.hidden);
    out.h.assign(h.begin(), h.end());
    return out;
  }

  double eval_ao(const ParamStore& params, std::span<const double> h, const PoseContext& ctx) const {
    Tape tape(&params);
    return tape.scalar(record_ao(tape, tape.input(h), ctx));
  }

  Vec3 forward_map(const ParamStore& params, const PoseContext& ctx, const Vec3& x_c, bool delta_enabled = true) const {
    return forward_map_jacobian(params, ctx, x_c, delta_enabled).value;
  }

  /// Forward map LBS(w(x), P, x) + delta(x, P) and its exact Jacobian, via
  /// three forward-mode tangent directions.
  MapEval forward_map_jacobian(const ParamStore& params, const PoseContext& ctx, const Vec3& x_c,
                               bool delta_enabled = true) const {
    thread_local Eigen::MatrixXd enc, logits, enc_delta, delta_out;
    const std::size_t degree = cfg_.pe_degree_coords;
    const auto pe = static_cast<Eigen::Index>(pe_size(degree));
    enc.resize(pe, 4);
    positional_encoding_jvp(x_c, degree, enc);
    skinning_.forward_jvp(params.values(), enc, logits);

    const auto nb = static_cast<Eigen::Index>(bones_);
    const double m = logits.col(0).maxCoeff();
    Eigen::VectorXd w = (logits.col(0).array() - m).exp();
    w /= w.sum();
    // d softmax: dw_j = w_j * (dz_j - sum_k w_k dz_k)
    const Eigen::RowVector3d mean_dz = w.transpose() * logits.rightCols(3);
    MapEval out;
    const double w_bg = w(nb);
    out.value = w_bg * x_c;
    out.jacobian = w_bg * Mat3::Identity();
    out.jacobian += x_c * (w_bg * (logits.row(nb).rightCols(3) - mean_dz));
    for (Eigen::Index j = 0; j < nb; ++j) {
      const auto& t = ctx.pose.transforms[static_cast<std::size_t>(j)];
      const Vec3 y = t.apply(x_c);
      out.value += w(j) * y;
      out.jacobian += w(j) * t.rotation;
      out.jacobian += y * (w(j) * (logits.row(j).rightCols(3) - mean_dz));
    }
    if (delta_enabled) {
      const auto nf = static_cast<Eigen::Index>(ctx.feature.size());
      enc_delta.resize(pe + nf, 4);
      enc_delta.topRows(pe) = enc;
      enc_delta.bottomRows(nf).setZero();
      for (Eigen::Index i = 0; i < nf; ++i) enc_delta(pe + i, 0) = ctx.feature[static_cast<std::size_t>(i)];
      delta_.forward_jvp(params.values(), enc_delta, delta_out);
      out.value += delta_out.col(0);
      out.jacobian += delta_out.rightCols(3);
    }
    return out;
  }

  // Tape recording.

  Tape::Slot record_skinning(Tape& tape, const Vec3& x_c) const {
    thread_local std::vector<double> enc;
    enc.resize(pe_size(cfg_.pe_degree_coords));
    positional_encoding(x_c, cfg_.pe_degree_coords, enc);
    return tape.softmax(skinning_.record(tape, tape.input(enc)).output);
  }

  Tape::Slot record_delta(Tape& tape, const Vec3& x_c, const PoseContext& ctx) const {
    thread_local std::vector<double> enc;
    const std::size_t pe = pe_size(cfg_.pe_degree_coords);
    enc.resize(pe + ctx.feature.size());
    positional_encoding(x_c, cfg_.pe_degree_coords, std::span(enc).first(pe));
    std::copy(ctx.feature.begin(), ctx.feature.end(), enc.begin() + static_cast<std::ptrdiff_t>(pe));
    return delta_.record(tape, tape.input(enc)).output;
  }

  RadianceSlots record_radiance(Tape& tape, const Vec3& x_c, const Vec3& var) const {
    thread_local std::vector<double> enc;
    enc.resize(ipe_size(cfg_.ipe_degree));
    integrated_pe(x_c, var, cfg_.ipe_degree, enc);
    RadianceSlots s;
    s.input = tape.input(enc);
    const auto net = radiance_.record(tape, s.input);
    s.hidden = net.hidden;
    s.sigma = tape.softplus(tape.slice(net.output, 0, 1));
    s.color = tape.sigmoid(tape.slice(net.output, 1, 3));
    return s;
  }

  Tape::Slot record_ao(Tape& tape, Tape::Slot hidden, const PoseContext& ctx) const {
    const auto cat = tape.concat(hidden, tape.input(ctx.feature));
    return tape.sigmoid(ao_.record(tape, cat).output);
  }

  /// Accumulates seed^T * d(forward_map)/d(theta) at x_c into `grads`
  /// (skinning and deformation parameters only).
  void forward_map_vjp(const ParamStore& params, const PoseContext& ctx, const Vec3& x_c, const Vec3& seed,
                       bool delta_enabled, std::span<double> grads, Tape& tape) const {
    tape.reset(params);
    const auto w = record_skinning(tape, x_c);
    thread_local std::vector<double> dw;
    dw.resize(bones_ + 1);
    for (std::size_t j = 0; j < bones_; ++j) dw[j] = seed.dot(ctx.pose.transforms[j].apply(x_c));
    dw[bones_] = seed.dot(x_c);
    tape.backward(w, dw, grads);
    if (delta_enabled) {
      tape.reset(params);
      const auto d = record_delta(tape, x_c, ctx);
      const double s[3] = {seed.x(), seed.y(), seed.z()};
      tape.backward(d, s, grads);
    }
  }

 private:
  FieldConfig cfg_;
  std::size_t bones_ = 0;
  Mlp skinning_;
  Mlp delta_;
  Mlp radiance_;
  Mlp ao_;
};

/// Attributes of one canonical query.
struct Shade {
  Vec3 c = Vec3::Zero();
  double sigma = 0.0;
  double a = 1.0;
};

/// Learned actor bound to a parameter vector, with the inference-time toggles.
struct NeuralActor {
  const ActorFields* fields = nullptr;
  const ParamStore* params = nullptr;
  bool ao_enabled = true;
  bool delta_enabled = true;

  MapEval map(const PoseContext& ctx, const Vec3& x_c) const {
    return fields->forward_map_jacobian(*params, ctx, x_c, delta_enabled);
  }

  Shade shade(const PoseContext& ctx, const Vec3& x_c, const Vec3& var) const {
    thread_local Tape tape;
    tape.reset(*params);
    const auto s = fields->record_radiance(tape, x_c, var);
    Shade out;
    auto c = tape.value(s.color);
    out.c = Vec3(c[0], c[1], c[2]);
    out.sigma = tape.scalar(s.sigma);
    out.a = ao_enabled ? tape.scalar(fields->record_ao(tape, s.hidden, ctx)) : 1.0;
    return out;
  }
};

}  // namespace volact
