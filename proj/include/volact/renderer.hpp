#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "volact/errors.hpp"
#include "volact/fields.hpp"
#include "volact/linalg.hpp"
#include "volact/parallel.hpp"
#include "volact/rng.hpp"
#include "volact/rootfind.hpp"

namespace volact {

/// Pinhole camera. Camera frame: x right, y down, z forward; pixel (i, j) has
/// its center at (i + 0.5, j + 0.5).
struct Camera {
  double focal = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;
  Transform world_to_camera;

  void validate() const {
    if (!(focal > 0.0)) throw ConfigError("camera focal length must be positive");
    if (width < 1 || height < 1) throw ConfigError("camera image size must be at least 1x1");
  }

  Vec3 center() const { return world_to_camera.inverse().translation; }

  /// Continuous pixel coordinates of a world point; nullopt behind the camera.
  std::optional<std::pair<double, double>> project(const Vec3& x_world) const {
    const Vec3 p = world_to_camera.apply(x_world);
    if (p.z() <= 0.0) return std::nullopt;
    return std::pair{focal * p.x() / p.z() + cx, focal * p.y() / p.z() + cy};
  }

  /// Same camera at a different resolution (intrinsics scaled).
  Camera scaled(int new_width, int new_height) const {
    Camera out = *this;
    const double sx = static_cast<double>(new_width) / width;
    const double sy = static_cast<double>(new_height) / height;
    out.focal = focal * sx;
    out.cx = cx * sx;
    out.cy = cy * sy;
    out.width = new_width;
    out.height = new_height;
    return out;
  }

  /// Camera at `eye` looking at `target` with world up vector `up`.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width, int height) {
    const Vec3 z = (target - eye).normalized();
    const Vec3 x = z.cross(up).normalized();
    const Vec3 y = z.cross(x);
    Camera cam;
    cam.focal = focal;
    cam.width = width;
    cam.height = height;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    Mat3 r;
    r.row(0) = x.transpose();
    r.row(1) = y.transpose();
    r.row(2) = z.transpose();
    cam.world_to_camera.rotation = r;
    cam.world_to_camera.translation = -(r * eye);
    return cam;
  }
};

inline nlohmann::json to_json(const Camera& c) {
  return {{"focal", c.focal},   {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height},
          {"world_to_camera", c.world_to_camera.to_row_major()}};
}

inline Camera camera_from_json(const nlohmann::json& j) {
  Camera c;
  c.focal = j.at("focal").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.world_to_camera = Transform::from_row_major(j.at("world_to_camera").get<std::array<double, 16>>());
  c.validate();
  return c;
}

struct Cone {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double pixel_radius = 0.0;  // base radius per unit distance along the cone
};

/// Cone through the center of pixel (px, py).
inline Cone generate_cone(const Camera& cam, double px, double py) {
  const Vec3 d_cam((px + 0.5 - cam.cx) / cam.focal, (py + 0.5 - cam.cy) / cam.focal, 1.0);
  const Mat3 cam_to_world = cam.world_to_camera.rotation.transpose();
  Cone cone;
  cone.origin = cam.center();
  cone.direction = (cam_to_world * d_cam).normalized();
  cone.pixel_radius = 2.0 / std::sqrt(12.0) / cam.focal;
  return cone;
}

struct GaussianSample {
  Vec3 mu = Vec3::Zero();
  Vec3 var = Vec3::Zero();  // diagonal of the covariance
  double t_near = 0.0;
  double t_far = 0.0;
  bool valid = true;

  double delta() const { return t_far - t_near; }
  double t_mid() const { return 0.5 * (t_near + t_far); }
};

/// Mean and diagonal covariance of the conical frustum between t0 and t1,
/// using the numerically stable closed forms in terms of the interval
/// midpoint and half-width.
inline GaussianSample frustum_gaussian(const Cone& cone, double t0, double t1) {
  const double mid = 0.5 * (t0 + t1);
  const double hw = 0.5 * (t1 - t0);
  const double mid2 = mid * mid;
  const double hw2 = hw * hw;
  const double denom = 3.0 * mid2 + hw2;
  const double t_mean = mid + 2.0 * mid * hw2 / denom;
  const double t_var = hw2 / 3.0 - (4.0 / 15.0) * (hw2 * hw2 * (12.0 * mid2 - hw2)) / (denom * denom);
  const double r2 = cone.pixel_radius * cone.pixel_radius;
  const double r_var = r2 * (mid2 / 4.0 + (5.0 / 12.0) * hw2 - (4.0 / 15.0) * (hw2 * hw2) / denom);
  const Vec3& d = cone.direction;
  const Vec3 d2 = d.cwiseProduct(d);
  const double dmag2 = std::max(1e-10, d.squaredNorm());
  GaussianSample s;
  s.mu = cone.origin + t_mean * d;
  s.var = t_var * d2 + r_var * (Vec3::Ones() - d2 / dmag2);
  s.t_near = t0;
  s.t_far = t1;
  return s;
}

/// n contiguous intervals tiling [near, far]; with `stratified` the interior
/// boundaries are jittered within their half-bins.
inline std::vector<GaussianSample> cast_cone_samples(const Cone& cone, double near, double far, std::size_t n,
                                                     bool stratified, Rng* rng = nullptr) {
  if (!(near > 0.0 && near < far) || n == 0) throw ConfigError("cast_cone_samples: need 0 < near < far and n >= 1");
  const double step = (far - near) / static_cast<double>(n);
  std::vector<double> edges(n + 1);
  edges[0] = near;
  edges[n] = far;
  for (std::size_t k = 1; k < n; ++k) {
    const double jitter = (stratified && rng) ? rng->uniform() - 0.5 : 0.0;
    edges[k] = near + (static_cast<double>(k) + jitter) * step;
  }
  std::vector<GaussianSample> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(frustum_gaussian(cone, edges[k], edges[k + 1]));
  return out;
}

enum class FailureStrategy { ZeroFill, Interpolate };

NLOHMANN_JSON_SERIALIZE_ENUM(FailureStrategy, {{FailureStrategy::ZeroFill, "zero"},
                                               {FailureStrategy::Interpolate, "interp"}})

struct ShadedSample {
  Vec3 c = Vec3::Zero();
  double sigma = 0.0;
  double a = 1.0;
  Vec3 x_c = Vec3::Zero();
  Vec3 mu = Vec3::Zero();  // view-space position
  double t = 0.0;          // interval midpoint
  double delta = 0.0;      // interval length
  bool failed = false;
};

/// Argmax-density merge over candidate attributes; ties keep the first.
inline std::size_t select_candidate(std::span<const Shade> shades) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < shades.size(); ++i)
    if (shades[i].sigma > shades[best].sigma) best = i;
  return best;
}

struct QueryStats {
  std::size_t queried = 0;
  std::size_t failed = 0;
  std::size_t attempts = 0;
  std::size_t iterations = 0;

  QueryStats& operator+=(const QueryStats& o) {
    queried += o.queried;
    failed += o.failed;
    attempts += o.attempts;
    iterations += o.iterations;
    return *this;
  }
};

/// Root-finds the sample mean, shades every converged candidate and keeps the
/// densest one. With no converged candidate the sample is flagged failed.
template <class Model>
ShadedSample query_sample(const Model& model, const PoseContext& ctx, const GaussianSample& sample,
                          const RootFindConfig& rf, QueryStats* stats = nullptr) {
  ShadedSample out;
  out.mu = sample.mu;
  out.t = sample.t_mid();
  out.delta = sample.delta();
  const auto set = solve_inverse([&](const Vec3& x) { return model.map(ctx, x); }, ctx, sample.mu, rf);
  if (stats) {
    ++stats->queried;
    stats->attempts += set.attempts;
    stats->iterations += set.iterations;
  }
  if (set.failed()) {
    out.failed = true;
    if (stats) ++stats->failed;
    return out;
  }
  thread_local std::vector<Shade> shades;
  shades.clear();
  for (const auto& cand : set.candidates) shades.push_back(model.shade(ctx, cand.x_c, sample.var));
  const std::size_t best = select_candidate(shades);
  out.c = shades[best].c;
  out.sigma = shades[best].sigma;
  out.a = shades[best].a;
  out.x_c = set.candidates[best].x_c;
  return out;
}

/// Fills failed samples. ZeroFill zeroes their attributes; Interpolate blends
/// the two nearest valid neighbors linearly in depth, copies the nearest one
/// at either end of the ray, and zero-fills a ray with no valid sample. The
/// `failed` flags are preserved.
inline void interpolate_failures(std::vector<ShadedSample>& samples, FailureStrategy strategy) {
  auto zero = [](ShadedSample& s) {
    s.c.setZero();
    s.sigma = 0.0;
    s.a = 0.0;
    s.x_c.setZero();
  };
  const bool any_valid = std::any_of(samples.begin(), samples.end(), [](const auto& s) { return !s.failed; });
  if (strategy == FailureStrategy::ZeroFill || !any_valid) {
    for (auto& s : samples)
      if (s.failed) zero(s);
    return;
  }
  const std::size_t n = samples.size();
  std::vector<std::optional<std::size_t>> prev(n), next(n);
  std::optional<std::size_t> last;
  for (std::size_t i = 0; i < n; ++i) {
    prev[i] = last;
    if (!samples[i].failed) last = i;
  }
  last.reset();
  for (std::size_t i = n; i-- > 0;) {
    next[i] = last;
    if (!samples[i].failed) last = i;
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = samples[i];
    if (!s.failed) continue;
    const ShadedSample* lo = prev[i] ? &samples[*prev[i]] : nullptr;
    const ShadedSample* hi = next[i] ? &samples[*next[i]] : nullptr;
    if (lo && hi) {
      const double span = hi->t - lo->t;
      const double u = span > 0.0 ? (s.t - lo->t) / span : 0.5;
      s.c = (1.0 - u) * lo->c + u * hi->c;
      s.sigma = (1.0 - u) * lo->sigma + u * hi->sigma;
      s.a = (1.0 - u) * lo->a + u * hi->a;
      s.x_c = (1.0 - u) * lo->x_c + u * hi->x_c;
    } else {
      const ShadedSample* src = lo ? lo : hi;
      s.c = src->c;
      s.sigma = src->sigma;
      s.a = src->a;
      s.x_c = src->x_c;
    }
  }
}

struct CompositeResult {
  Vec3 color = Vec3::Zero();
  Vec3 canonical = Vec3::Zero();  // accumulated canonical coordinates X(r)
  Vec3 position = Vec3::Zero();   // accumulated view-space positions
  double acc = 0.0;
  double transmittance = 1.0;  // remaining after the last sample
};

/// Alpha compositing with w_i = T_i (1 - exp(-sigma_i delta_i)) and emitted
/// color a_i * c_i. `weights`, when given, receives w_i.
inline CompositeResult composite(std::span<const ShadedSample> samples, std::vector<double>* weights = nullptr) {
  CompositeResult out;
  double trans = 1.0;
  if (weights) weights->assign(samples.size(), 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const double att = std::exp(-s.sigma * s.delta);
    const double w = trans * (1.0 - att);
    out.color += w * s.a * s.c;
    out.canonical += w * s.x_c;
    out.position += w * s.mu;
    out.acc += w;
    if (weights) (*weights)[i] = w;
    trans *= att;
  }
  out.transmittance = trans;
  return out;
}

struct CompositeGrad {
  std::vector<double> d_sigma;
  std::vector<Vec3> d_emitted;  // gradient w.r.t. a_i * c_i
};

/// Gradient of <g, composite color> w.r.t. each sample's density and emitted color.
inline void composite_backward(std::span<const ShadedSample> samples, const Vec3& g, CompositeGrad& out) {
  const std::size_t n = samples.size();
  out.d_sigma.assign(n, 0.0);
  out.d_emitted.assign(n, Vec3::Zero());
  thread_local std::vector<double> trans_after, contrib;
  trans_after.resize(n);
  contrib.resize(n);
  double trans = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples[i];
    const double att = std::exp(-s.sigma * s.delta);
    const double w = trans * (1.0 - att);
    contrib[i] = w * g.dot(s.a * s.c);
    out.d_emitted[i] = w * g;
    trans *= att;
    trans_after[i] = trans;
  }
  double suffix = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const auto& s = samples[k];
    out.d_sigma[k] = s.delta * (trans_after[k] * g.dot(s.a * s.c) - suffix);
    suffix += contrib[k];
  }
}

struct RenderConfig {
  double near = 1.0;
  double far = 3.0;
  std::size_t n_samples = 64;
  bool stratified = false;
  FailureStrategy failure_strategy = FailureStrategy::Interpolate;
  bool ao_enabled = true;
  bool delta_enabled = true;
  double skeleton_margin = 0.0;  // > 0: samples farther than this from every posed bone are empty
  std::uint64_t seed = 0;

  void validate() const {
    if (!(near > 0.0 && near < far)) throw ConfigError("render: need 0 < near < far");
    if (n_samples == 0) throw ConfigError("render: n_samples must be positive");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RenderConfig, near, far, n_samples, stratified, failure_strategy,
                                                ao_enabled, delta_enabled, skeleton_margin, seed)

inline NeuralActor make_actor(const ActorFields& fields, const ParamStore& params, const RenderConfig& cfg) {
  return NeuralActor{&fields, &params, cfg.ao_enabled, cfg.delta_enabled};
}

/// True when the sample is skipped as empty space.
inline bool culled(const PoseContext& ctx, const Vec3& x, double margin) {
  return margin > 0.0 && ctx.posed.min_distance(x) > margin;
}

/// Shaded, failure-filled samples of one ray.
template <class Model>
std::vector<ShadedSample> shade_ray(const Model& model, const PoseContext& ctx, const Cone& cone,
                                    const RenderConfig& cfg, const RootFindConfig& rf, Rng* rng, QueryStats& stats) {
  const auto samples = cast_cone_samples(cone, cfg.near, cfg.far, cfg.n_samples, cfg.stratified, rng);
  std::vector<ShadedSample> shaded(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (culled(ctx, s.mu, cfg.skeleton_margin)) {
      shaded[i].mu = s.mu;
      shaded[i].t = s.t_mid();
      shaded[i].delta = s.delta();
      continue;
    }
    shaded[i] = query_sample(model, ctx, s, rf, &stats);
  }
  interpolate_failures(shaded, cfg.failure_strategy);
  return shaded;
}

struct RenderStats {
  std::size_t queried_samples = 0;
  std::size_t failed_samples = 0;
  std::size_t newton_attempts = 0;
  std::size_t newton_iterations = 0;

  double failure_fraction() const {
    return queried_samples ? static_cast<double>(failed_samples) / static_cast<double>(queried_samples) : 0.0;
  }
  double mean_newton_iterations() const {
    return newton_attempts ? static_cast<double>(newton_iterations) / static_cast<double>(newton_attempts) : 0.0;
  }
};

struct RenderOutput {
  int width = 0;
  int height = 0;
  std::vector<double> color;     // H x W x 3
  std::vector<double> corr;      // H x W x 3 canonical coordinates
  std::vector<double> position;  // H x W x 3 accumulated view-space positions
  std::vector<double> acc;       // H x W
  RenderStats stats;

  std::size_t pixel(int x, int y) const { return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x); }
};

/// Renders every pixel; rows run in parallel, statistics are reduced in row order.
template <class Model>
RenderOutput render_image(const Camera& camera, const PoseContext& ctx, const Model& model, const RenderConfig& cfg,
                          const RootFindConfig& rf) {
  cfg.validate();
  rf.validate();
  RenderOutput out;
  out.width = camera.width;
  out.height = camera.height;
  const std::size_t npix = static_cast<std::size_t>(camera.width) * static_cast<std::size_t>(camera.height);
  out.color.assign(3 * npix, 0.0);
  out.corr.assign(3 * npix, 0.0);
  out.position.assign(3 * npix, 0.0);
  out.acc.assign(npix, 0.0);
  std::vector<QueryStats> row_stats(static_cast<std::size_t>(camera.height));
  parallel_for(static_cast<std::size_t>(camera.height), [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < camera.width; ++x) {
      const std::size_t p = out.pixel(x, y);
      Rng rng = Rng::derive(cfg.seed, p);
      const auto shaded = shade_ray(model, ctx, generate_cone(camera, x, y), cfg, rf, &rng, row_stats[row]);
      const auto res = composite(shaded);
      for (int k = 0; k < 3; ++k) {
        out.color[3 * p + static_cast<std::size_t>(k)] = res.color(k);
        out.corr[3 * p + static_cast<std::size_t>(k)] = res.canonical(k);
        out.position[3 * p + static_cast<std::size_t>(k)] = res.position(k);
      }
      out.acc[p] = res.acc;
    }
  });
  QueryStats total;
  for (const auto& s : row_stats) total += s;
  out.stats = {total.queried, total.failed, total.attempts, total.iterations};
  return out;
}

inline nlohmann::json to_json(const RenderStats& s) {
  return {{"queried_samples", s.queried_samples},   {"failed_samples", s.failed_samples},
          {"failure_fraction", s.failure_fraction()}, {"newton_attempts", s.newton_attempts},
          {"mean_newton_iterations", s.mean_newton_iterations()}};
}

}  // namespace volact
