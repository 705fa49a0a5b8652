#include <gtest/gtest.h>

#include "support.hpp"

using namespace volact;
using volact::testing::MicroScene;

namespace {

Camera test_camera(int w = 64, int h = 64) {
  return Camera::look_at(Vec3(0.0, 0.0, 2.2), Vec3::Zero(), Vec3::UnitY(), 100.0 * w / 64.0, w, h);
}

ShadedSample sample(double sigma, const Vec3& c, double a, double delta, double t = 0.0) {
  ShadedSample s;
  s.sigma = sigma;
  s.c = c;
  s.a = a;
  s.delta = delta;
  s.t = t;
  s.x_c = c;
  return s;
}

std::vector<ShadedSample> random_ray(Rng& rng, std::size_t n) {
  std::vector<ShadedSample> r;
  double t = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = rng.uniform(0.001, 0.05);
    r.push_back(sample(rng.uniform() < 0.3 ? 0.0 : rng.uniform(0, 80), Vec3(rng.uniform(), rng.uniform(), rng.uniform()),
                       rng.uniform(0.2, 1.0), d, t + 0.5 * d));
    t += d;
  }
  return r;
}

CapsuleActor one_bone_actor() {
  CapsuleActor a;
  Bone b;
  b.head = Vec3(0, -0.3, 0);
  b.tail = Vec3(0, 0.3, 0);
  a.skeleton.bones = {b};
  a.capsules = {Capsule{0.15, 0.05, 40.0, Vec3(0.8, 0.5, 0.2)}};
  return a;
}

}  // namespace

TEST(Camera, ValidationAndJson) {
  Camera c = test_camera();
  EXPECT_NO_THROW(c.validate());
  const Camera back = camera_from_json(to_json(c));
  EXPECT_EQ(back.focal, c.focal);
  EXPECT_EQ(back.world_to_camera.rotation, c.world_to_camera.rotation);
  c.focal = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(GenerateCone, PrincipalPointAlongOpticalAxis) {
  Camera c = test_camera();
  c.cx = 10.5;
  c.cy = 20.5;
  const Cone cone = generate_cone(c, 10, 20);
  const Vec3 axis = c.world_to_camera.rotation.row(2).transpose();
  EXPECT_LE((cone.direction - axis).norm(), 1e-15);
  EXPECT_LE((cone.origin - Vec3(0, 0, 2.2)).norm(), 1e-12);
  EXPECT_NEAR(cone.pixel_radius, 2.0 / std::sqrt(12.0) / c.focal, 1e-18);
}

TEST(GenerateCone, AdjacentPixelsDifferByInverseFocal) {
  const Camera c = test_camera();
  const Cone a = generate_cone(c, 31, 32), b = generate_cone(c, 32, 32);
  const double angle = std::acos(std::clamp(a.direction.dot(b.direction), -1.0, 1.0));
  EXPECT_NEAR(angle, 1.0 / c.focal, 1e-3 / c.focal);
}

TEST(GenerateCone, DirectionsUnitNorm) {
  const Camera c = test_camera(37, 23);
  for (int y = 0; y < c.height; ++y)
    for (int x = 0; x < c.width; ++x) EXPECT_NEAR(generate_cone(c, x, y).direction.norm(), 1.0, 1e-12);
}

TEST(CastConeSamples, IntervalsTileRange) {
  Rng rng(1);
  const Cone cone = generate_cone(test_camera(), 5, 9);
  for (bool strat : {false, true}) {
    const auto s = cast_cone_samples(cone, 1.5, 2.9, 64, strat, &rng);
    ASSERT_EQ(s.size(), 64u);
    EXPECT_EQ(s.front().t_near, 1.5);
    EXPECT_EQ(s.back().t_far, 2.9);
    double total = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      EXPECT_LT(s[i].t_near, s[i].t_far);
      if (i > 0) EXPECT_EQ(s[i].t_near, s[i - 1].t_far);
      for (int k = 0; k < 3; ++k) EXPECT_GE(s[i].var(k), 0.0);
      total += s[i].delta();
    }
    EXPECT_NEAR(total, 1.4, 1e-12);
  }
}

TEST(CastConeSamples, ZeroRadiusConeIsOnAxis) {
  Cone cone;
  cone.origin = Vec3(0.1, 0.2, 0.3);
  cone.direction = Vec3(1, 2, 2).normalized();
  cone.pixel_radius = 0.0;
  for (const auto& s : cast_cone_samples(cone, 1.0, 3.0, 16, false)) {
    const Vec3 rel = s.mu - cone.origin;
    EXPECT_LE(rel.cross(cone.direction).norm(), 1e-12);
    // Only along-axis variance remains: Sigma = t_var d d^T restricted to its diagonal.
    const Vec3 d2 = cone.direction.cwiseProduct(cone.direction);
    const double t_var = s.var.x() / d2.x();
    EXPECT_NEAR(s.var.y(), t_var * d2.y(), 1e-15);
    EXPECT_NEAR(s.var.z(), t_var * d2.z(), 1e-15);
  }
}

TEST(CastConeSamples, DeterministicWithoutStratification) {
  const Cone cone = generate_cone(test_camera(), 3, 4);
  const auto a = cast_cone_samples(cone, 1.0, 2.0, 32, false);
  const auto b = cast_cone_samples(cone, 1.0, 2.0, 32, false);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].mu, b[i].mu);
    EXPECT_EQ(a[i].var, b[i].var);
  }
}

TEST(CastConeSamples, FrustumMomentsMatchNumericalIntegration) {
  Cone cone;
  cone.direction = Vec3(0.3, -0.2, 1.0).normalized();
  cone.pixel_radius = 0.05;
  const double t0 = 1.0, t1 = 1.4;
  const auto g = frustum_gaussian(cone, t0, t1);
  // Brute force: uniform density over the frustum volume, radius r t at depth t.
  const Vec3 d = cone.direction;
  const Vec3 u = d.unitOrthogonal(), v = d.cross(u);
  const int nt = 400, nr = 200, np = 64;
  double mass = 0.0;
  Vec3 mean = Vec3::Zero();
  std::vector<std::pair<Vec3, double>> pts;
  for (int i = 0; i < nt; ++i) {
    const double t = t0 + (i + 0.5) * (t1 - t0) / nt;
    const double rmax = cone.pixel_radius * t;
    for (int j = 0; j < nr; ++j) {
      const double r = (j + 0.5) * rmax / nr;
      for (int k = 0; k < np; ++k) {
        const double phi = 2 * M_PI * (k + 0.5) / np;
        const double w = r * (rmax / nr) * (2 * M_PI / np) * ((t1 - t0) / nt);
        const Vec3 p = t * d + r * (std::cos(phi) * u + std::sin(phi) * v);
        pts.push_back({p, w});
        mass += w;
        mean += w * p;
      }
    }
  }
  mean /= mass;
  Vec3 var = Vec3::Zero();
  for (const auto& [p, w] : pts) var += w * (p - mean).cwiseProduct(p - mean);
  var /= mass;
  EXPECT_LE((g.mu - mean).norm(), 1e-5);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(g.var(k), var(k), 2e-3 * var.maxCoeff());
}

TEST(SelectCandidate, SingleCandidatePassesThrough) {
  const Shade s{Vec3(0.1, 0.2, 0.3), 2.0, 0.5};
  EXPECT_EQ(select_candidate(std::span(&s, 1)), 0u);
}

TEST(SelectCandidate, HigherDensityWinsRegardlessOfColor) {
  const Shade s[2] = {{Vec3(1, 1, 1), 0.1, 1.0}, {Vec3(0, 0, 0), 5.0, 1.0}};
  EXPECT_EQ(select_candidate(s), 1u);
}

TEST(SelectCandidate, ScaleInvariance) {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    std::vector<Shade> s(1 + rng.index(6));
    for (auto& v : s) v.sigma = rng.uniform(0, 10);
    const auto i = select_candidate(s);
    const double k = std::pow(10.0, rng.uniform(-3, 3));
    for (auto& v : s) v.sigma *= k;
    EXPECT_EQ(select_candidate(s), i);
  }
}

TEST(QuerySample, ArgmaxAgreesWithBruteForceOverAllInitializations) {
  MicroScene m;
  const NeuralActor model{&m.fields, &m.params, true, true};
  Rng rng(5);
  RootFindConfig rf = m.rf;
  for (int t = 0; t < 100; ++t) {
    GaussianSample g;
    g.mu = Vec3(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.2, 0.2));
    g.var = Vec3::Constant(1e-5);
    g.t_near = 1.0;
    g.t_far = 1.01;
    const auto got = query_sample(model, m.contexts[0], g, rf);
    // Brute force: Newton from all B inverse-rigid starts plus identity, no dedup.
    double best = -1.0;
    Vec3 best_x = Vec3::Zero();
    std::vector<Vec3> starts;
    for (const auto& inv : m.contexts[0].inverses) starts.push_back(inv.apply(g.mu));
    starts.push_back(g.mu);
    for (const auto& x0 : starts) {
      const auto c = newton_solve([&](const Vec3& x) { return model.map(m.contexts[0], x); }, g.mu, x0, rf);
      if (c.status != RootStatus::Converged) continue;
      const auto sh = model.shade(m.contexts[0], c.x_c, g.var);
      if (sh.sigma > best) {
        best = sh.sigma;
        best_x = c.x_c;
      }
    }
    if (best < 0.0) {
      EXPECT_TRUE(got.failed);
      continue;
    }
    EXPECT_NEAR(got.sigma, best, 1e-9);
    EXPECT_LE((got.x_c - best_x).norm(), 1e-6);
  }
}

TEST(InterpolateFailures, NoFailuresUnchanged) {
  Rng rng(1);
  auto r = random_ray(rng, 20);
  const auto before = r;
  for (auto strat : {FailureStrategy::ZeroFill, FailureStrategy::Interpolate}) {
    interpolate_failures(r, strat);
    for (std::size_t i = 0; i < r.size(); ++i) {
      EXPECT_EQ(r[i].sigma, before[i].sigma);
      EXPECT_EQ(r[i].c, before[i].c);
    }
  }
}

TEST(InterpolateFailures, MidpointIsArithmeticMean) {
  std::vector<ShadedSample> r = {sample(2.0, Vec3(0.2, 0.4, 0.6), 0.8, 0.1, 1.0), sample(0, Vec3::Zero(), 0, 0.1, 1.1),
                                 sample(4.0, Vec3(0.6, 0.0, 0.2), 0.4, 0.1, 1.2)};
  r[1].failed = true;
  interpolate_failures(r, FailureStrategy::Interpolate);
  EXPECT_NEAR(r[1].sigma, 3.0, 1e-12);
  EXPECT_LE((r[1].c - Vec3(0.4, 0.2, 0.4)).norm(), 1e-12);
  EXPECT_NEAR(r[1].a, 0.6, 1e-12);
  EXPECT_TRUE(r[1].failed);
}

TEST(InterpolateFailures, EndRunsCopyNearestValid) {
  std::vector<ShadedSample> r = {sample(0, Vec3::Zero(), 0, 0.1, 1.0), sample(3.0, Vec3(0.1, 0.2, 0.3), 0.9, 0.1, 1.1),
                                 sample(0, Vec3::Zero(), 0, 0.1, 1.2), sample(0, Vec3::Zero(), 0, 0.1, 1.3)};
  r[0].failed = r[2].failed = r[3].failed = true;
  interpolate_failures(r, FailureStrategy::Interpolate);
  for (std::size_t i : {0u, 2u, 3u}) {
    EXPECT_EQ(r[i].sigma, 3.0);
    EXPECT_EQ(r[i].c, Vec3(0.1, 0.2, 0.3));
  }
}

TEST(InterpolateFailures, AllFailedRendersBackground) {
  Rng rng(2);
  auto r = random_ray(rng, 10);
  for (auto& s : r) s.failed = true;
  interpolate_failures(r, FailureStrategy::Interpolate);
  for (const auto& s : r) EXPECT_EQ(s.sigma, 0.0);
  EXPECT_EQ(composite(r).color, Vec3::Zero());
}

TEST(InterpolateFailures, ZeroFillZeroesAttributes) {
  Rng rng(2);
  auto r = random_ray(rng, 10);
  r[4].failed = true;
  interpolate_failures(r, FailureStrategy::ZeroFill);
  EXPECT_EQ(r[4].sigma, 0.0);
  EXPECT_EQ(r[4].c, Vec3::Zero());
  EXPECT_EQ(r[4].x_c, Vec3::Zero());
}

TEST(Composite, EmptyMedium) {
  Rng rng(1);
  auto r = random_ray(rng, 16);
  for (auto& s : r) s.sigma = 0.0;
  const auto res = composite(r);
  EXPECT_EQ(res.color, Vec3::Zero());
  EXPECT_EQ(res.acc, 0.0);
  EXPECT_EQ(res.transmittance, 1.0);
}

TEST(Composite, OpaqueFrontSample) {
  Rng rng(1);
  auto r = random_ray(rng, 16);
  r[0].sigma = 1e6;
  r[0].delta = 1.0;
  const auto res = composite(r);
  EXPECT_LE((res.color - r[0].a * r[0].c).norm(), 1e-12);
  EXPECT_LE((res.canonical - r[0].x_c).norm(), 1e-12);
  EXPECT_NEAR(res.acc, 1.0, 1e-12);
}

TEST(Composite, HomogeneousMediumClosedForm) {
  const double sigma = 3.0, near = 1.0, far = 1.8;
  const Vec3 c(0.7, 0.3, 0.9);
  std::vector<ShadedSample> r;
  const int n = 256;
  for (int i = 0; i < n; ++i) r.push_back(sample(sigma, c, 1.0, (far - near) / n));
  const Vec3 expect = c * (1.0 - std::exp(-sigma * (far - near)));
  EXPECT_LE((composite(r).color - expect).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Composite, TelescopingTransmittanceMatchesPrefixSums) {
  Rng rng(4);
  for (int t = 0; t < 1000; ++t) {
    const auto r = random_ray(rng, 64);
    std::vector<double> w;
    composite(r, &w);
    double prefix = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double direct = std::exp(-prefix) * (1.0 - std::exp(-r[i].sigma * r[i].delta));
      EXPECT_NEAR(w[i], direct, 1e-12);
      prefix += r[i].sigma * r[i].delta;
    }
  }
}

TEST(Composite, WeightsBounded) {
  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> w;
    const auto res = composite(random_ray(rng, 32), &w);
    double sum = 0.0;
    for (double v : w) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_LE(sum, 1.0 + 1e-12);
    EXPECT_GE(res.acc, 0.0);
    EXPECT_LE(res.acc, 1.0 + 1e-12);
  }
}

TEST(Composite, AoNeverBrightens) {
  Rng rng(6);
  for (int t = 0; t < 1000; ++t) {
    auto r = random_ray(rng, 32);
    const Vec3 with_ao = composite(r).color;
    for (auto& s : r) s.a = 1.0;
    const Vec3 without = composite(r).color;
    for (int k = 0; k < 3; ++k) EXPECT_LE(with_ao(k), without(k) + 1e-15);
  }
}

TEST(Composite, BackwardMatchesFiniteDifferences) {
  Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    auto r = random_ray(rng, 24);
    const Vec3 g(rng.normal(), rng.normal(), rng.normal());
    CompositeGrad cg;
    composite_backward(r, g, cg);
    for (std::size_t k = 0; k < r.size(); ++k) {
      const double s0 = r[k].sigma;
      const double h = 1e-6;
      r[k].sigma = s0 + h;
      const double up = g.dot(composite(r).color);
      r[k].sigma = s0 - h;
      const double dn = g.dot(composite(r).color);
      r[k].sigma = s0;
      EXPECT_NEAR(cg.d_sigma[k], (up - dn) / (2 * h), 1e-7);
    }
  }
}

TEST(RenderImage, IdentityPoseOneBoneMatchesOracle) {
  const CapsuleActor actor = one_bone_actor();
  const Camera cam = test_camera();
  const PoseContext ctx(actor.skeleton, Pose::identity(1));
  RenderConfig rc;
  rc.near = 1.5;
  rc.far = 2.9;
  const auto gt = oracle_render(cam, actor, ctx.pose, rc);
  const auto out = render_image(cam, ctx, AnalyticActor{&actor}, rc, RootFindConfig{});
  EXPECT_GE(psnr(out.color, gt.color), 40.0);
}

TEST(RenderImage, StatsAndAccumulationBounds) {
  MicroScene m;
  const auto out = render_image(m.camera, m.contexts[0], make_actor(m.fields, m.params, m.rcfg), m.rcfg, RootFindConfig{});
  EXPECT_GE(out.stats.failure_fraction(), 0.0);
  EXPECT_LE(out.stats.failure_fraction(), 1.0);
  EXPECT_GT(out.stats.queried_samples, 0u);
  EXPECT_GE(out.stats.mean_newton_iterations(), 0.0);
  for (double a : out.acc) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
  for (double c : out.color) {
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 1.0);
  }
}

TEST(RenderImage, SameSeedBitwiseIdentical) {
  MicroScene m;
  RenderConfig rc = m.rcfg;
  rc.stratified = true;
  rc.seed = 99;
  const auto actor = make_actor(m.fields, m.params, rc);
  const auto a = render_image(m.camera, m.contexts[0], actor, rc, RootFindConfig{});
  const auto b = render_image(m.camera, m.contexts[0], actor, rc, RootFindConfig{});
  EXPECT_EQ(a.color, b.color);
  EXPECT_EQ(a.corr, b.corr);
}

TEST(RenderImage, CorrespondenceSanityOnRigidOneBoneScene) {
  CapsuleActor actor = one_bone_actor();
  actor.capsules[0].sigma_max = 400.0;
  actor.capsules[0].falloff = 0.005;
  const Camera cam = test_camera();
  Pose p = Pose::identity(1);
  p.transforms[0] = Transform::rotate_about(Vec3(0, 0, 1), 0.6, Vec3::Zero()) * Transform::translate(Vec3(0.05, 0, 0));
  const PoseContext ctx(actor.skeleton, p);
  RenderConfig rc;
  rc.near = 1.5;
  rc.far = 2.9;
  const double voxel = (rc.far - rc.near) / static_cast<double>(rc.n_samples);
  const auto out = render_image(cam, ctx, AnalyticActor{&actor}, rc, RootFindConfig{});
  const Transform inv = p.transforms[0].inverse();
  int checked = 0;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const std::size_t px = out.pixel(x, y);
      if (out.acc[px] <= 0.9) continue;
      // Surface hit by fine marching along the ray.
      const Cone cone = generate_cone(cam, x, y);
      double t = rc.near;
      while (t < rc.far && oracle_density(actor, ctx, cone.origin + t * cone.direction).sigma < 0.5 * actor.capsules[0].sigma_max)
        t += 1e-4;
      if (t >= rc.far) continue;  // grazing ray below the hit threshold
      const Vec3 hit_c = inv.apply(cone.origin + t * cone.direction);
      const Vec3 x_c = Vec3(out.corr[3 * px], out.corr[3 * px + 1], out.corr[3 * px + 2]) / out.acc[px];
      EXPECT_LE((x_c - hit_c).norm(), 2.0 * voxel) << "pixel " << x << "," << y;
      ++checked;
    }
  EXPECT_GT(checked, 50);
}

TEST(RenderImage, AoDisabledNeverDarker) {
  MicroScene m;
  RenderConfig with = m.rcfg, without = m.rcfg;
  without.ao_enabled = false;
  const auto a = render_image(m.camera, m.contexts[0], make_actor(m.fields, m.params, with), with, RootFindConfig{});
  const auto b = render_image(m.camera, m.contexts[0], make_actor(m.fields, m.params, without), without, RootFindConfig{});
  for (std::size_t i = 0; i < a.color.size(); ++i) EXPECT_LE(a.color[i], b.color[i] + 1e-15);
}

TEST(RenderImage, CullingSkipsOnlyEmptySpace) {
  const CapsuleActor actor = default_actor();
  const Camera cam = test_camera(32, 32);
  const double a[3] = {0.1, 0.4, -0.5};
  const PoseContext ctx(actor.skeleton, forward_kinematics(actor.skeleton, a));
  RenderConfig rc;
  rc.near = 1.5;
  rc.far = 2.9;
  // Interpolation would bridge failed empty-space samples, which culling leaves valid.
  rc.failure_strategy = FailureStrategy::ZeroFill;
  RenderConfig culled = rc;
  culled.skeleton_margin = 0.13;
  const auto full = render_image(cam, ctx, AnalyticActor{&actor}, rc, RootFindConfig{});
  const auto fast = render_image(cam, ctx, AnalyticActor{&actor}, culled, RootFindConfig{});
  EXPECT_LT(fast.stats.queried_samples, full.stats.queried_samples / 2);
  EXPECT_GE(psnr(fast.color, full.color), 60.0);
}
