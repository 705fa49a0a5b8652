#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "volact/errors.hpp"
#include "volact/fields.hpp"
#include "volact/linalg.hpp"
#include "volact/skeleton.hpp"

namespace volact {

enum class RootStatus { Converged, MaxIters, SingularJacobian };

struct Candidate {
  Vec3 x_c = Vec3::Zero();
  RootStatus status = RootStatus::MaxIters;
  double residual = INFINITY;
  std::optional<std::size_t> init_bone;  // nullopt: identity initialization
  int iterations = 0;
  Mat3 jacobian = Mat3::Identity();  // d(forward map)/dx at x_c
};

struct CandidateSet {
  Vec3 query = Vec3::Zero();
  std::vector<Candidate> candidates;  // converged and deduplicated
  std::size_t attempts = 0;
  std::size_t iterations = 0;  // summed over all attempts

  bool failed() const { return candidates.empty(); }
};

struct RootFindConfig {
  std::size_t K = 5;
  double tol = 1e-5;
  int max_iters = 10;
  double dedup_eps = 1e-4;
  bool include_identity_candidate = true;

  void validate() const {
    if (!(tol > 0.0)) throw ConfigError("rootfind.tol must be positive");
    if (max_iters < 1) throw ConfigError("rootfind.max_iters must be at least 1");
    if (K < 1) throw ConfigError("rootfind.K must be at least 1");
    if (dedup_eps < 0.0) throw ConfigError("rootfind.dedup_eps must be non-negative");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RootFindConfig, K, tol, max_iters, dedup_eps,
                                                include_identity_candidate)

struct InitCandidate {
  Vec3 x = Vec3::Zero();
  std::optional<std::size_t> bone;
};

/// T_i^-1 x_v for the K nearest posed bones, then x_v itself (the background
/// candidate) when enabled.
inline std::vector<InitCandidate> init_candidates(const Vec3& x_v, const PoseContext& ctx, const RootFindConfig& cfg) {
  std::vector<InitCandidate> out;
  for (std::size_t j : nearest_bones(x_v, ctx.posed, cfg.K)) out.push_back({ctx.inverses[j].apply(x_v), j});
  if (cfg.include_identity_candidate) out.push_back({x_v, std::nullopt});
  return out;
}

inline std::vector<Vec3> init_candidates(const Vec3& x_v, const Skeleton& skeleton, const Pose& pose,
                                         const RootFindConfig& cfg) {
  std::vector<Vec3> out;
  for (const auto& c : init_candidates(x_v, PoseContext(skeleton, pose), cfg)) out.push_back(c.x);
  return out;
}

/// Damped Newton iteration on f(x) = map(x) - x_v, where map(x) returns the
/// forward map value and Jacobian. A step that increases |f| is halved up to
/// four times.
template <class Map>
Candidate newton_solve(const Map& map, const Vec3& x_v, const Vec3& x0, const RootFindConfig& cfg) {
  Candidate out;
  Vec3 x = x0;
  MapEval e = map(x);
  double r = (e.value - x_v).norm();
  auto finish = [&](RootStatus status) {
    out.x_c = x;
    out.residual = r;
    out.status = status;
    out.jacobian = e.jacobian;
    return out;
  };
  if (r <= cfg.tol) return finish(RootStatus::Converged);
  for (int k = 0; k < cfg.max_iters; ++k) {
    const auto dx = try_solve3(e.jacobian, e.value - x_v);
    if (!dx || !dx->allFinite()) return finish(RootStatus::SingularJacobian);
    double step = 1.0;
    Vec3 xn = x - *dx;
    MapEval en = map(xn);
    double rn = (en.value - x_v).norm();
    for (int halving = 0; halving < 4 && !(rn <= r); ++halving) {
      step *= 0.5;
      xn = x - step * *dx;
      en = map(xn);
      rn = (en.value - x_v).norm();
    }
    x = xn;
    e = en;
    r = std::isfinite(rn) ? rn : INFINITY;
    ++out.iterations;
    if (r <= cfg.tol) return finish(RootStatus::Converged);
  }
  return finish(RootStatus::MaxIters);
}

/// Newton from every initial candidate; keeps converged roots, merging roots
/// closer than dedup_eps into the lowest-residual representative.
template <class Map>
CandidateSet solve_inverse(const Map& map, const PoseContext& ctx, const Vec3& x_v, const RootFindConfig& cfg) {
  CandidateSet set;
  set.query = x_v;
  for (const auto& init : init_candidates(x_v, ctx, cfg)) {
    Candidate c = newton_solve(map, x_v, init.x, cfg);
    c.init_bone = init.bone;
    ++set.attempts;
    set.iterations += static_cast<std::size_t>(c.iterations);
    if (c.status != RootStatus::Converged) continue;
    bool merged = false;
    for (auto& kept : set.candidates) {
      if ((kept.x_c - c.x_c).norm() <= cfg.dedup_eps) {
        if (c.residual < kept.residual) kept = c;
        merged = true;
        break;
      }
    }
    if (!merged) set.candidates.push_back(c);
  }
  return set;
}

/// Implicit-function gradient of a root x* of map(x; theta) = x_v:
/// dL/dtheta = -(J^-T dL/dx*)^T d(map)/dtheta. `vjp(seed)` must accumulate
/// seed^T d(map)/dtheta. Returns false (nothing accumulated) if J is singular.
template <class Vjp>
bool implicit_grad(const Mat3& jacobian, const Vec3& upstream, Vjp&& vjp) {
  const auto v = try_solve3(jacobian.transpose(), upstream);
  if (!v || !v->allFinite()) return false;
  vjp(Vec3(-*v));
  return true;
}

/// Implicit gradient through the learned forward map for a converged candidate.
inline bool implicit_grad(const ActorFields& fields, const ParamStore& params, const PoseContext& ctx,
                          const Candidate& candidate, const Vec3& upstream, bool delta_enabled,
                          std::span<double> grads, Tape& scratch) {
  return implicit_grad(candidate.jacobian, upstream, [&](const Vec3& seed) {
    fields.forward_map_vjp(params, ctx, candidate.x_c, seed, delta_enabled, grads, scratch);
  });
}

}  // namespace volact
