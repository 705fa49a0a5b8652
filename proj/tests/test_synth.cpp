#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace volact;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("volact_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

RenderConfig desk_render() {
  RenderConfig rc;
  rc.near = 1.5;
  rc.far = 2.9;
  return rc;
}

}  // namespace

TEST(OracleDensity, IdentityPoseEqualsCanonical) {
  const auto actor = default_actor();
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const Vec3 x(rng.uniform(-0.3, 0.3), rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3));
    const auto a = oracle_density(actor, Pose::identity(3), x);
    const auto b = canonical_density(actor, x);
    EXPECT_EQ(a.sigma, b.sigma);
    EXPECT_EQ(a.c, b.c);
  }
}

TEST(OracleDensity, FarPointIsEmpty) {
  const auto actor = default_actor();
  EXPECT_EQ(oracle_density(actor, Pose::identity(3), Vec3(0.5, 0.0, 0.0)).sigma, 0.0);
}

TEST(OracleDensity, PointOnDeformedAxisHasPeakDensityAndBoneAlbedo) {
  const auto actor = default_actor();
  const double a[3] = {0.2, -0.7, 0.9};
  const Pose p = forward_kinematics(actor.skeleton, a);
  for (std::size_t b = 0; b < 3; ++b) {
    const auto& bone = actor.skeleton.bones[b];
    const Vec3 x = p.transforms[b].apply(0.5 * (bone.head + bone.tail));
    const auto o = oracle_density(actor, p, x);
    EXPECT_EQ(o.sigma, actor.capsules[b].sigma_max);
    EXPECT_EQ(o.c, actor.capsules[b].albedo);
  }
}

TEST(OracleDensity, RigidityWhereOneCapsuleDominates) {
  const auto actor = default_actor();
  Rng rng(2);
  int checked = 0;
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> ang;
    const Pose p = sample_pose(actor.skeleton, {{-1, 1}, {-1, 1}, {-1, 1}}, rng, &ang);
    const std::size_t b = rng.index(3);
    const auto& bone = actor.skeleton.bones[b];
    const Vec3 x = bone.head + rng.uniform() * (bone.tail - bone.head) +
                   Vec3(rng.uniform(-0.1, 0.1), 0.0, rng.uniform(-0.1, 0.1));
    // Skip points that another capsule also covers, in either configuration.
    bool clear = true;
    for (std::size_t o = 0; o < 3; ++o) {
      if (o == b) continue;
      if (capsule_density(actor, o, x) > 0.0) clear = false;
      if (capsule_density(actor, o, p.transforms[o].inverse().apply(p.transforms[b].apply(x))) > 0.0) clear = false;
    }
    if (!clear) continue;
    EXPECT_NEAR(oracle_density(actor, p, p.transforms[b].apply(x)).sigma, capsule_density(actor, b, x), 1e-9);
    ++checked;
  }
  EXPECT_GT(checked, 200);
}

TEST(OracleRender, EmptyActorIsBlack) {
  auto actor = default_actor();
  for (auto& c : actor.capsules) c.sigma_max = 0.0;
  const auto cam = ring_cameras(1, 2.2, 0.2, 30.0, 16, 16)[0];
  const auto out = oracle_render(cam, actor, Pose::identity(3), desk_render());
  for (double v : out.color) EXPECT_EQ(v, 0.0);
}

TEST(OracleRender, Deterministic) {
  const auto actor = default_actor();
  const auto cam = ring_cameras(1, 2.2, 0.2, 30.0, 16, 16)[0];
  const auto a = oracle_render(cam, actor, Pose::identity(3), desk_render());
  const auto b = oracle_render(cam, actor, Pose::identity(3), desk_render());
  EXPECT_EQ(a.color, b.color);
  EXPECT_EQ(a.corr, b.corr);
}

TEST(OracleRender, ResolutionConvergence) {
  // Smooth scene: one fat capsule with a wide falloff. Each low-res pixel is
  // compared with the mean of its 2x2 block at double resolution.
  CapsuleActor actor;
  Bone b;
  b.head = Vec3(0, -0.25, 0);
  b.tail = Vec3(0, 0.25, 0);
  actor.skeleton.bones = {b};
  actor.capsules = {Capsule{0.15, 0.2, 10.0, Vec3(0.7, 0.6, 0.5)}};
  const auto cam = ring_cameras(1, 2.2, 0.2, 50.0, 32, 32)[0];
  const auto lo = oracle_render(cam, actor, Pose::identity(1), desk_render());
  const auto hi = oracle_render(cam.scaled(64, 64), actor, Pose::identity(1), desk_render());
  double se = 0.0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int k = 0; k < 3; ++k) {
        double m = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) m += hi.color[3 * hi.pixel(2 * x + dx, 2 * y + dy) + k];
        const double d = lo.color[3 * lo.pixel(x, y) + k] - 0.25 * m;
        se += d * d;
      }
  EXPECT_LT(std::sqrt(se / (32.0 * 32.0 * 3.0)), 2.0 / 255.0);
}

TEST(AnalyticActor, IdentityPoseMatchesOracle) {
  const auto actor = default_actor();
  const auto cam = ring_cameras(1, 2.2, 0.26, 100.0, 64, 64)[0];
  const PoseContext ctx(actor.skeleton, Pose::identity(3));
  const auto gt = oracle_render(cam, actor, ctx.pose, desk_render());
  const auto out = render_image(cam, ctx, AnalyticActor{&actor}, desk_render(), RootFindConfig{});
  EXPECT_GE(psnr(out.color, gt.color), 40.0);
}

TEST(AnalyticActor, ModeratePoseMatchesOracle) {
  const auto actor = default_actor();
  const auto cam = ring_cameras(2, 2.2, 0.26, 100.0, 64, 64)[1];
  const double a[3] = {0.05, 0.15, -0.15};
  const PoseContext ctx(actor.skeleton, forward_kinematics(actor.skeleton, a));
  const auto gt = oracle_render(cam, actor, ctx.pose, desk_render());
  const auto out = render_image(cam, ctx, AnalyticActor{&actor}, desk_render(), RootFindConfig{});
  EXPECT_GE(psnr(out.color, gt.color), 35.0);
}

TEST(DominantBone, LowerIndexOnTies) {
  const auto actor = default_actor();
  EXPECT_EQ(dominant_bone(actor, Vec3(0.3, -0.12, 0.0)), 0u);
  EXPECT_EQ(dominant_bone(actor, Vec3(0.0, 0.3, 0.0)), 2u);
}

TEST(SamplePose, ZeroWidthRangesGiveIdentity) {
  const auto actor = default_actor();
  Rng rng(1);
  const Pose p = sample_pose(actor.skeleton, {{0, 0}, {0, 0}, {0, 0}}, rng);
  for (const auto& t : p.transforms) {
    EXPECT_EQ(t.rotation, Mat3::Identity());
    EXPECT_EQ(t.translation, Vec3::Zero());
  }
}

TEST(SamplePose, SameSeedSamePose) {
  const auto actor = default_actor();
  const std::vector<std::pair<double, double>> r = {{-1, 1}, {-1, 1}, {-1, 1}};
  Rng a(5), b(5);
  const Pose pa = sample_pose(actor.skeleton, r, a), pb = sample_pose(actor.skeleton, r, b);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(pa.transforms[j].rotation, pb.transforms[j].rotation);
}

TEST(SamplePose, AnglesWithinRanges) {
  const auto actor = default_actor();
  const std::vector<std::pair<double, double>> r = {{-0.3, 0.1}, {0.2, 0.9}, {-1.0, -0.5}};
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> ang;
    sample_pose(actor.skeleton, r, rng, &ang);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_GE(ang[j], r[j].first);
      EXPECT_LE(ang[j], r[j].second);
    }
  }
}

TEST(SamplePose, RangeCountMismatchThrows) {
  Rng rng(1);
  EXPECT_THROW(sample_pose(default_actor().skeleton, {{0, 1}}, rng), ConfigError);
}

TEST(DefaultActor, FitsUnitBoxAndValidates) {
  const auto actor = default_actor();
  EXPECT_NO_THROW(actor.validate());
  for (std::size_t b = 0; b < 3; ++b)
    for (const Vec3& e : {actor.skeleton.bones[b].head, actor.skeleton.bones[b].tail})
      EXPECT_LE(e.cwiseAbs().maxCoeff() + actor.capsules[b].radius + actor.capsules[b].falloff, 0.5 + 1e-12);
  const auto back = actor_from_json(to_json(actor));
  EXPECT_EQ(back.capsules[2].albedo, actor.capsules[2].albedo);
}

TEST(WriteDataset, CountsRoundTripAndReproducibility) {
  const auto actor = default_actor();
  const auto cams = ring_cameras(2, 2.2, 0.26, 25.0, 16, 16);
  Rng rng(3);
  std::vector<Pose> poses;
  std::vector<std::vector<double>> angles(3);
  for (int i = 0; i < 3; ++i) poses.push_back(sample_pose(actor.skeleton, {{-0.3, 0.3}, {-1, 1}, {-1, 1}}, rng, &angles[i]));
  const auto dir = scratch_dir("dataset");
  const auto d = write_dataset(dir, actor, cams, poses, desk_render(), angles);
  EXPECT_EQ(d.records.size(), 6u);

  const auto back = read_dataset(dir);
  ASSERT_EQ(back.records.size(), 6u);
  EXPECT_EQ(back.frame_ids, d.frame_ids);
  EXPECT_EQ(back.camera_ids, d.camera_ids);
  EXPECT_EQ(back.angles, angles);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_EQ(back.poses[i].transforms[j].rotation, poses[i].transforms[j].rotation);
  EXPECT_EQ(back.cameras[1].world_to_camera.translation, cams[1].world_to_camera.translation);
  const Image img = back.load_image(back.records[4]);
  EXPECT_EQ(img.width, 16);
  EXPECT_EQ(img.height, 16);

  const auto first = slurp(dir / d.records[4].image);
  const auto dir2 = scratch_dir("dataset2");
  write_dataset(dir2, actor, cams, poses, desk_render(), angles);
  EXPECT_EQ(slurp(dir2 / d.records[4].image), first);
  EXPECT_EQ(slurp(dir2 / "manifest.json"), slurp(dir / "manifest.json"));
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST(ReadDataset, MissingManifestIsIoError) {
  EXPECT_THROW(read_dataset(scratch_dir("missing")), IoError);
}

TEST(ImageIo, PpmAndRawPlanesRoundTrip) {
  const auto dir = scratch_dir("io");
  Image img(3, 2);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<double>(i) / 17.0;
  write_ppm(dir / "a.ppm", img);
  const Image back = read_ppm(dir / "a.ppm");
  ASSERT_EQ(back.rgb.size(), img.rgb.size());
  for (std::size_t i = 0; i < img.rgb.size(); ++i) EXPECT_NEAR(back.rgb[i], img.rgb[i], 0.5 / 255.0 + 1e-12);

  std::vector<double> planes(2 * 3 * 3);
  for (std::size_t i = 0; i < planes.size(); ++i) planes[i] = 0.25 * static_cast<double>(i);
  write_raw_planes(dir / "corr.f32", planes, 2, 3, 3);
  const auto raw = read_raw_planes(dir / "corr.f32");
  EXPECT_EQ(raw.height, 2);
  EXPECT_EQ(raw.width, 3);
  EXPECT_EQ(raw.channels, 3);
  EXPECT_EQ(raw.data, planes);
  EXPECT_EQ(std::filesystem::file_size(dir / "corr.f32"), planes.size() * 4);
  std::filesystem::remove_all(dir);
}
