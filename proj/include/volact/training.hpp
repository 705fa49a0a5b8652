#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "volact/errors.hpp"
#include "volact/fields.hpp"
#include "volact/image_io.hpp"
#include "volact/parallel.hpp"
#include "volact/param_store.hpp"
#include "volact/renderer.hpp"
#include "volact/rng.hpp"
#include "volact/rootfind.hpp"
#include "volact/skeleton.hpp"

namespace volact {

struct LossWeights {
  double lambda_w = 1.0;
  double beta_delta = 0.1;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossWeights, lambda_w, beta_delta)

struct TrainConfig {
  std::size_t rays_per_batch = 1024;
  std::size_t steps = 20000;
  double lr_init = 5e-4;
  double lr_final = 5e-5;
  std::size_t lr_decay_steps = 0;  // 0: decay over `steps`
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t bone_samples_per_step = 8;  // per bone
  std::uint64_t seed = 0;
  FailureStrategy failure_strategy = FailureStrategy::Interpolate;
  LossWeights weights;
  std::size_t chunk_rays = 16;
  std::size_t log_every = 100;
  std::size_t checkpoint_every = 1000;
  std::size_t eval_every = 0;  // 0: only at the end

  void validate() const {
    if (rays_per_batch == 0) throw ConfigError("train.rays_per_batch must be positive");
    if (chunk_rays == 0) throw ConfigError("train.chunk_rays must be positive");
    if (!(lr_init >= 0.0 && lr_final >= 0.0)) throw ConfigError("learning rates must be non-negative");
    if (weights.lambda_w < 0.0 || weights.beta_delta < 0.0) throw ConfigError("loss weights must be non-negative");
  }

  /// Exponential decay from lr_init to lr_final, constant afterwards.
  double learning_rate(std::size_t step) const {
    const std::size_t span = lr_decay_steps ? lr_decay_steps : steps;
    if (span == 0 || lr_init == 0.0 || lr_final == 0.0) return lr_init;
    const double u = std::min(1.0, static_cast<double>(step) / static_cast<double>(span));
    return lr_init * std::pow(lr_final / lr_init, u);
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, rays_per_batch, steps, lr_init, lr_final, lr_decay_steps,
                                                adam_beta1, adam_beta2, adam_eps, bone_samples_per_step, seed,
                                                failure_strategy, weights, chunk_rays, log_every, checkpoint_every,
                                                eval_every)

// Losses

/// Mean over rays of the squared L2 color error. `grad`, when given,
/// receives dL/dC per ray.
inline double image_loss(std::span<const Vec3> c, std::span<const Vec3> c_hat, std::vector<Vec3>* grad = nullptr) {
  if (c.size() != c_hat.size()) throw DegenerateInput("image_loss: size mismatch");
  if (c.empty()) return 0.0;
  const double n = static_cast<double>(c.size());
  double sum = 0.0;
  if (grad) grad->resize(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Vec3 d = c[i] - c_hat[i];
    sum += d.squaredNorm();
    if (grad) (*grad)[i] = 2.0 * d / n;
  }
  return sum / n;
}

/// Mean squared error of the skinning weights against one-hot targets at the
/// sample's bone, averaged over the B+1 slots and the samples. Gradients are
/// scaled by `scale` and accumulated into `grads` when non-empty.
inline double skinning_loss(const ActorFields& fields, const ParamStore& params, std::span<const BonePoint> samples,
                            std::span<double> grads = {}, double scale = 1.0) {
  if (samples.empty()) return 0.0;
  const std::size_t slots = fields.bones() + 1;
  const double norm = 1.0 / (static_cast<double>(slots) * static_cast<double>(samples.size()));
  Tape tape;
  std::vector<double> seed(slots);
  double total = 0.0;
  for (const auto& s : samples) {
    tape.reset(params);
    const auto w = fields.record_skinning(tape, s.x);
    const auto v = tape.value(w);
    for (std::size_t j = 0; j < slots; ++j) {
      const double d = v[j] - (j == s.bone ? 1.0 : 0.0);
      total += d * d;
      seed[j] = 2.0 * d * norm * scale;
    }
    if (!grads.empty()) tape.backward(w, seed, grads);
  }
  return total * norm;
}

/// Mean squared norm of the non-linear deformation at the samples under `ctx`.
inline double delta_loss(const ActorFields& fields, const ParamStore& params, std::span<const BonePoint> samples,
                         const PoseContext& ctx, std::span<double> grads = {}, double scale = 1.0) {
  if (samples.empty()) return 0.0;
  const double norm = 1.0 / static_cast<double>(samples.size());
  Tape tape;
  double total = 0.0;
  for (const auto& s : samples) {
    tape.reset(params);
    const auto d = fields.record_delta(tape, s.x, ctx);
    const auto v = tape.value(d);
    const double seed[3] = {2.0 * v[0] * norm * scale, 2.0 * v[1] * norm * scale, 2.0 * v[2] * norm * scale};
    total += v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    if (!grads.empty()) tape.backward(d, seed, grads);
  }
  return total * norm;
}

inline double total_loss(double image, double skinning, double delta, const LossWeights& w = {}) {
  return image + w.lambda_w * skinning + w.beta_delta * delta;
}

// Differentiable ray rendering

/// Scratch state reused across rays on one worker.
struct RayWorkspace {
  std::vector<Tape> tapes;
  Tape scratch;
  std::vector<ShadedSample> shaded;
  struct Active {
    bool on = false;
    Candidate candidate;
    ActorFields::RadianceSlots slots;
    Tape::Slot ao = -1;
    Vec3 var = Vec3::Zero();
  };
  std::vector<Active> active;
  CompositeGrad cgrad;
};

struct RayResult {
  Vec3 color = Vec3::Zero();
  double acc = 0.0;
};

/// Renders one ray with the learned fields. If `grads` is non-empty, the
/// gradient of <upstream(C), C> is accumulated into it: through compositing,
/// the winning candidate's radiance and AO networks, and implicitly through
/// the root of the forward map. Failed and interpolated samples are constants.
template <class Upstream>
RayResult trace_ray(const ActorFields& fields, const ParamStore& params, const PoseContext& ctx, const Cone& cone,
                    const RenderConfig& rcfg, const RootFindConfig& rf, Rng* rng, Upstream&& upstream,
                    std::span<double> grads, RayWorkspace& ws, QueryStats& stats) {
  const NeuralActor model{&fields, &params, rcfg.ao_enabled, rcfg.delta_enabled};
  const auto samples = cast_cone_samples(cone, rcfg.near, rcfg.far, rcfg.n_samples, rcfg.stratified, rng);
  const std::size_t n = samples.size();
  ws.shaded.assign(n, ShadedSample{});
  ws.active.assign(n, RayWorkspace::Active{});
  if (ws.tapes.size() < n) ws.tapes.resize(n);
  auto map = [&](const Vec3& x) { return model.map(ctx, x); };

  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples[i];
    auto& out = ws.shaded[i];
    out.mu = s.mu;
    out.t = s.t_mid();
    out.delta = s.delta();
    if (culled(ctx, s.mu, rcfg.skeleton_margin)) continue;
    const auto set = solve_inverse(map, ctx, s.mu, rf);
    ++stats.queried;
    stats.attempts += set.attempts;
    stats.iterations += set.iterations;
    if (set.failed()) {
      out.failed = true;
      ++stats.failed;
      continue;
    }
    auto& act = ws.active[i];
    double best_sigma = -INFINITY;
    for (const auto& cand : set.candidates) {
      ws.scratch.reset(params);
      const auto slots = fields.record_radiance(ws.scratch, cand.x_c, s.var);
      const auto ao = rcfg.ao_enabled ? fields.record_ao(ws.scratch, slots.hidden, ctx) : Tape::Slot(-1);
      const double sigma = ws.scratch.scalar(slots.sigma);
      if (sigma > best_sigma) {
        best_sigma = sigma;
        std::swap(ws.scratch, ws.tapes[i]);
        act.on = true;
        act.candidate = cand;
        act.slots = slots;
        act.ao = ao;
        act.var = s.var;
      }
    }
    const Tape& tape = ws.tapes[i];
    const auto c = tape.value(act.slots.color);
    out.c = Vec3(c[0], c[1], c[2]);
    out.sigma = tape.scalar(act.slots.sigma);
    out.a = act.ao >= 0 ? tape.scalar(act.ao) : 1.0;
    out.x_c = act.candidate.x_c;
  }
  interpolate_failures(ws.shaded, rcfg.failure_strategy);
  const auto comp = composite(ws.shaded);
  RayResult result{comp.color, comp.acc};
  if (grads.empty()) return result;

  const Vec3 g = upstream(comp.color);
  composite_backward(ws.shaded, g, ws.cgrad);
  const std::size_t ipe_degree = fields.config().ipe_degree;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& act = ws.active[i];
    if (!act.on) continue;
    const auto& s = ws.shaded[i];
    Tape& tape = ws.tapes[i];
    tape.zero_adjoints();
    const Vec3 dc = s.a * ws.cgrad.d_emitted[i];
    const double dc_arr[3] = {dc.x(), dc.y(), dc.z()};
    tape.seed(act.slots.color, dc_arr);
    const double ds = ws.cgrad.d_sigma[i];
    tape.seed(act.slots.sigma, std::span(&ds, 1));
    if (act.ao >= 0) {
      const double da = s.c.dot(ws.cgrad.d_emitted[i]);
      tape.seed(act.ao, std::span(&da, 1));
    }
    tape.backpropagate(grads);
    const Vec3 dx = integrated_pe_backward(act.candidate.x_c, act.var, ipe_degree, tape.adjoint(act.slots.input));
    implicit_grad(fields, params, ctx, act.candidate, dx, rcfg.delta_enabled, grads, ws.scratch);
  }
  return result;
}

struct RaySample {
  Cone cone;
  Vec3 target = Vec3::Zero();
  std::size_t context = 0;
};

/// One optimization batch: rays with reference colors, bone samples for the
/// auxiliary losses, and the pose under which the deformation loss is taken.
struct Batch {
  std::vector<RaySample> rays;
  std::vector<BonePoint> bone_samples;
  std::size_t delta_context = 0;
  std::uint64_t ray_seed = 0;
};

struct LossReport {
  double total = 0.0;
  double image = 0.0;
  double skinning = 0.0;
  double delta = 0.0;
  QueryStats stats;

  double failure_rate() const {
    return stats.queried ? static_cast<double>(stats.failed) / static_cast<double>(stats.queried) : 0.0;
  }
};

/// Total loss on a batch; with non-empty `grads`, accumulates its gradient.
/// Rays are processed in fixed-size chunks with private gradient buffers that
/// are summed in chunk order, so the result is independent of thread count.
inline LossReport loss_and_grad(const ActorFields& fields, const ParamStore& params,
                                std::span<const PoseContext> contexts, const Batch& batch, const RenderConfig& rcfg,
                                const RootFindConfig& rf, const LossWeights& weights, std::span<double> grads,
                                std::size_t chunk_rays = 16) {
  const std::size_t nrays = batch.rays.size();
  const bool want_grad = !grads.empty();
  const std::size_t nchunks = nrays ? (nrays + chunk_rays - 1) / chunk_rays : 0;
  std::vector<std::vector<double>> chunk_grads(want_grad ? nchunks : 0);
  std::vector<double> chunk_loss(nchunks, 0.0);
  std::vector<QueryStats> chunk_stats(nchunks);
  const double inv_n = nrays ? 1.0 / static_cast<double>(nrays) : 0.0;

  parallel_for(nchunks, [&](std::size_t ci) {
    thread_local RayWorkspace ws;
    std::span<double> g;
    if (want_grad) {
      chunk_grads[ci].assign(params.size(), 0.0);
      g = chunk_grads[ci];
    }
    const std::size_t begin = ci * chunk_rays;
    const std::size_t end = std::min(nrays, begin + chunk_rays);
    for (std::size_t r = begin; r < end; ++r) {
      const auto& ray = batch.rays[r];
      Rng rng = Rng::derive(batch.ray_seed, r);
      const auto res = trace_ray(
          fields, params, contexts[ray.context], ray.cone, rcfg, rf, &rng,
          [&](const Vec3& c) { return Vec3(2.0 * inv_n * (c - ray.target)); }, g, ws, chunk_stats[ci]);
      chunk_loss[ci] += (res.color - ray.target).squaredNorm();
    }
  });

  LossReport rep;
  double image_sum = 0.0;
  for (std::size_t ci = 0; ci < nchunks; ++ci) {
    image_sum += chunk_loss[ci];
    rep.stats += chunk_stats[ci];
    if (want_grad)
      for (std::size_t k = 0; k < grads.size(); ++k) grads[k] += chunk_grads[ci][k];
  }
  rep.image = image_sum * inv_n;
  rep.skinning = skinning_loss(fields, params, batch.bone_samples, grads, weights.lambda_w);
  rep.delta = delta_loss(fields, params, batch.bone_samples, contexts[batch.delta_context], grads, weights.beta_delta);
  rep.total = total_loss(rep.image, rep.skinning, rep.delta, weights);
  return rep;
}

// Optimizer

/// Adaptive-moment optimizer with bias correction.
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  void step(std::span<double> x, std::span<const double> g, double lr) {
    if (m.size() != x.size()) {
      m.assign(x.size(), 0.0);
      v.assign(x.size(), 0.0);
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

/// Optimizer state in the checkpoint container: entries adam.m, adam.v, adam.t.
inline void save_optimizer(const std::filesystem::path& path, const Adam& adam, std::size_t n) {
  ParamStore s;
  const std::size_t m_off = s.add("adam.m", n, 1).offset;
  const std::size_t v_off = s.add("adam.v", n, 1).offset;
  const std::size_t t_off = s.add("adam.t", 1, 1).offset;
  auto vals = s.values();
  for (std::size_t i = 0; i < n; ++i) {
    vals[m_off + i] = adam.m.empty() ? 0.0 : adam.m[i];
    vals[v_off + i] = adam.v.empty() ? 0.0 : adam.v[i];
  }
  vals[t_off] = static_cast<double>(adam.t);
  save_checkpoint(path, s);
}

inline void load_optimizer(const std::filesystem::path& path, Adam& adam, std::size_t n) {
  const ParamStore s = load_checkpoint(path);
  const auto* m = s.find("adam.m");
  const auto* v = s.find("adam.v");
  const auto* t = s.find("adam.t");
  if (!m || !v || !t || m->size() != n || v->size() != n) throw IoError("optimizer state does not match the model");
  const auto mv = s.values(*m);
  const auto vv = s.values(*v);
  adam.m.assign(mv.begin(), mv.end());
  adam.v.assign(vv.begin(), vv.end());
  adam.t = static_cast<std::uint64_t>(s.values(*t)[0]);
}

// Training loop

struct TrainView {
  Camera camera;
  std::size_t context = 0;
  Image image;
};

struct TrainingSet {
  std::vector<PoseContext> contexts;
  std::vector<TrainView> views;
};

struct StepReport {
  std::size_t step = 0;
  double loss = 0.0;
  double image_loss = 0.0;
  double skinning_loss = 0.0;
  double delta_loss = 0.0;
  double grad_norm = 0.0;
  double failure_rate = 0.0;
  double lr = 0.0;
};

inline nlohmann::json to_json(const StepReport& r) {
  return {{"step", r.step},
          {"loss", r.loss},
          {"image_loss", r.image_loss},
          {"skinning_loss", r.skinning_loss},
          {"delta_loss", r.delta_loss},
          {"grad_norm", r.grad_norm},
          {"failure_rate", r.failure_rate},
          {"lr", r.lr}};
}

class Trainer {
 public:
  Trainer(const ActorFields& fields, ParamStore& params, const Skeleton& skeleton, TrainConfig cfg,
          RenderConfig rcfg, RootFindConfig rf)
      : fields_(&fields), params_(&params), skeleton_(skeleton), cfg_(cfg), rcfg_(rcfg), rf_(rf) {
    cfg_.validate();
    rcfg_.validate();
    rf_.validate();
    rcfg_.failure_strategy = cfg_.failure_strategy;
    adam_.beta1 = cfg_.adam_beta1;
    adam_.beta2 = cfg_.adam_beta2;
    adam_.eps = cfg_.adam_eps;
  }

  std::size_t step_count() const { return step_; }
  void set_step_count(std::size_t s) { step_ = s; }
  Adam& optimizer() { return adam_; }
  const TrainConfig& config() const { return cfg_; }

  /// Draws the batch for the current step: rays uniform over (view, pixel),
  /// fresh bone samples and a random training pose for the deformation loss.
  Batch make_batch(const TrainingSet& data) const {
    if (data.views.empty()) throw ConfigError("training set has no views");
    Rng rng = Rng::derive(cfg_.seed, 2 * step_);
    Batch b;
    b.rays.reserve(cfg_.rays_per_batch);
    for (std::size_t r = 0; r < cfg_.rays_per_batch; ++r) {
      const auto& view = data.views[rng.index(data.views.size())];
      const int px = static_cast<int>(rng.index(static_cast<std::size_t>(view.camera.width)));
      const int py = static_cast<int>(rng.index(static_cast<std::size_t>(view.camera.height)));
      b.rays.push_back({generate_cone(view.camera, px, py),
                        Vec3(view.image.at(px, py, 0), view.image.at(px, py, 1), view.image.at(px, py, 2)),
                        view.context});
    }
    b.bone_samples = sample_bone_points(skeleton_, cfg_.bone_samples_per_step, rng);
    b.delta_context = rng.index(data.contexts.size());
    b.ray_seed = Rng::derive(cfg_.seed, 2 * step_ + 1).next();
    return b;
  }

  StepReport step(const TrainingSet& data) {
    const Batch batch = make_batch(data);
    params_->zero_grads();
    const auto rep = loss_and_grad(*fields_, *params_, data.contexts, batch, rcfg_, rf_, cfg_.weights,
                                   params_->grads(), cfg_.chunk_rays);
    StepReport out;
    out.step = step_;
    out.loss = rep.total;
    out.image_loss = rep.image;
    out.skinning_loss = rep.skinning;
    out.delta_loss = rep.delta;
    out.failure_rate = rep.failure_rate();
    double gn = 0.0;
    for (double g : params_->grads()) gn += g * g;
    out.grad_norm = std::sqrt(gn);
    out.lr = cfg_.learning_rate(step_);
    if (!std::isfinite(out.loss) || !std::isfinite(out.grad_norm)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << step_ << ": " << to_json(out).dump();
      throw NonFiniteLoss(msg.str());
    }
    adam_.step(params_->values(), params_->grads(), out.lr);
    params_->zero_grads();
    ++step_;
    return out;
  }

 private:
  const ActorFields* fields_;
  ParamStore* params_;
  Skeleton skeleton_;
  TrainConfig cfg_;
  RenderConfig rcfg_;
  RootFindConfig rf_;
  Adam adam_;
  std::size_t step_ = 0;
};

// Metrics

inline constexpr double kPsnrCap = 99.0;

inline double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw DegenerateInput("mse: images must be non-empty and equal in size");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

/// 10 log10(1 / MSE), capped.
inline double psnr(std::span<const double> img, std::span<const double> ref, double cap = kPsnrCap) {
  const double e = mse(img, ref);
  if (e <= 0.0) return cap;
  return std::min(cap, -10.0 * std::log10(e));
}

struct PixelCoord {
  int x = 0;
  int y = 0;
  bool operator==(const PixelCoord&) const = default;
};

struct CorrPair {
  Eigen::Vector2d source = Eigen::Vector2d::Zero();
  Eigen::Vector2d matched = Eigen::Vector2d::Zero();
  Eigen::Vector2d truth = Eigen::Vector2d::Zero();
};

inline constexpr double kForegroundThreshold = 0.5;

/// Nearest neighbor in canonical space: for each pixel of A, the foreground
/// pixel of B (acc > threshold) whose accumulated canonical coordinate is
/// closest, ties resolved by row-major order.
inline std::vector<PixelCoord> match_correspondences(const RenderOutput& a, const RenderOutput& b,
                                                     std::span<const PixelCoord> pixels,
                                                     double threshold = kForegroundThreshold,
                                                     const std::vector<double>* b_features = nullptr,
                                                     const std::vector<double>* a_features = nullptr) {
  const auto& fb = b_features ? *b_features : b.corr;
  const auto& fa = a_features ? *a_features : a.corr;
  std::vector<std::size_t> fg;
  for (std::size_t p = 0; p < b.acc.size(); ++p)
    if (b.acc[p] > threshold) fg.push_back(p);
  if (fg.empty()) throw EmptyForeground("no foreground pixels in the target image");
  std::vector<PixelCoord> out(pixels.size());
  parallel_for(pixels.size(), [&](std::size_t i) {
    const std::size_t pa = a.pixel(pixels[i].x, pixels[i].y);
    const Vec3 q(fa[3 * pa], fa[3 * pa + 1], fa[3 * pa + 2]);
    double best = INFINITY;
    std::size_t arg = fg[0];
    for (std::size_t p : fg) {
      const double d = (Vec3(fb[3 * p], fb[3 * p + 1], fb[3 * p + 2]) - q).squaredNorm();
      if (d < best) {
        best = d;
        arg = p;
      }
    }
    out[i] = {static_cast<int>(arg % static_cast<std::size_t>(b.width)),
              static_cast<int>(arg / static_cast<std::size_t>(b.width))};
  });
  return out;
}

/// Mean pixel distance between matched and ground-truth locations.
inline double p2p_error(std::span<const CorrPair> pairs) {
  if (pairs.empty()) throw DegenerateInput("p2p_error: no pairs");
  double s = 0.0;
  for (const auto& p : pairs) s += (p.matched - p.truth).norm();
  return s / static_cast<double>(pairs.size());
}

}  // namespace volact
