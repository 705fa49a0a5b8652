#include <gtest/gtest.h>

#include "support.hpp"

using namespace volact;

namespace {

Skeleton chain(std::size_t n) {
  Skeleton s;
  for (std::size_t j = 0; j < n; ++j) {
    Bone b;
    b.head = Vec3(0.0, 0.3 * static_cast<double>(j), 0.0);
    b.tail = Vec3(0.0, 0.3 * static_cast<double>(j + 1), 0.0);
    if (j > 0) b.parent = j - 1;
    s.bones.push_back(b);
  }
  return s;
}

SkinningWeights random_simplex(std::size_t n, Rng& rng) {
  SkinningWeights w(n);
  double sum = 0.0;
  for (auto& v : w) sum += (v = -std::log(1.0 - rng.uniform()));
  for (auto& v : w) v /= sum;
  return w;
}

Pose random_pose(const Skeleton& s, Rng& rng) {
  std::vector<double> a(s.size());
  for (auto& v : a) v = rng.uniform(-1.5, 1.5);
  Pose p = forward_kinematics(s, a);
  const Transform root = Transform::translate(Vec3(rng.normal(), rng.normal(), rng.normal()));
  for (auto& t : p.transforms) t = root * t;
  return p;
}

}  // namespace

TEST(Lbs, IdentityPoseIsIdentityForAnyWeights) {
  Rng rng(1);
  const Pose id = Pose::identity(3);
  for (int i = 0; i < 1000; ++i) {
    const auto w = random_simplex(4, rng);
    const Vec3 x(rng.normal(), rng.normal(), rng.normal());
    EXPECT_LE((lbs(w, id, x) - x).norm(), 1e-12);
  }
}

TEST(Lbs, OneHotTranslation) {
  Pose p = Pose::identity(2);
  p.transforms[1] = Transform::translate(Vec3(1, 0, 0));
  const SkinningWeights w = {0.0, 1.0, 0.0};
  EXPECT_EQ(lbs(w, p, Vec3::Zero()), Vec3(1, 0, 0));
}

TEST(Lbs, BackgroundWeightKeepsPointsFixed) {
  Rng rng(2);
  const auto s = chain(3);
  const SkinningWeights w = {0.0, 0.0, 0.0, 1.0};
  for (int i = 0; i < 100; ++i) {
    const Pose p = random_pose(s, rng);
    const Vec3 x(rng.normal(), rng.normal(), rng.normal());
    EXPECT_LE((lbs(w, p, x) - x).norm(), 1e-15);
  }
}

TEST(Lbs, AffineInPoint) {
  Rng rng(3);
  const auto s = chain(3);
  for (int i = 0; i < 1000; ++i) {
    const Pose p = random_pose(s, rng);
    const auto w = random_simplex(4, rng);
    const Vec3 x(rng.normal(), rng.normal(), rng.normal()), y(rng.normal(), rng.normal(), rng.normal());
    const Vec3 r = lbs(w, p, x + y) - lbs(w, p, x) - lbs(w, p, y) + lbs(w, p, Vec3::Zero());
    EXPECT_LE(r.norm(), 1e-12);
  }
}

TEST(NearestBones, PointOnDeformedBoneComesFirst) {
  const auto s = chain(3);
  const double a[3] = {0.3, -0.4, 0.8};
  const Pose p = forward_kinematics(s, a);
  const Vec3 on_bone2 = p.transforms[2].apply(0.5 * (s.bones[2].head + s.bones[2].tail));
  EXPECT_EQ(nearest_bones(on_bone2, s, p, 3).front(), 2u);
}

TEST(NearestBones, KAtLeastBReturnsAll) {
  const auto s = chain(3);
  auto idx = nearest_bones(Vec3(1, 1, 1), s, Pose::identity(3), 10);
  std::sort(idx.begin(), idx.end());
  EXPECT_EQ(idx, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(NearestBones, EquidistantTieGoesToLowerIndex) {
  Skeleton s;
  Bone b0, b1;
  b0.head = Vec3(-1, 0, 0);
  b0.tail = Vec3(-0.5, 0, 0);
  b1.head = Vec3(0.5, 0, 0);
  b1.tail = Vec3(1, 0, 0);
  s.bones = {b0, b1};
  const auto idx = nearest_bones(Vec3(0, 0.2, 0), s, Pose::identity(2), 2);
  EXPECT_EQ(idx, (std::vector<std::size_t>{0, 1}));
}

TEST(NearestBones, AgreesWithBruteForce) {
  Rng rng(5);
  const auto s = chain(5);
  for (int i = 0; i < 500; ++i) {
    const Pose p = random_pose(s, rng);
    const Vec3 x(rng.normal(), rng.normal(), rng.normal());
    const std::size_t k = 1 + rng.index(5);
    const auto got = nearest_bones(x, s, p, k);
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < s.size(); ++j)
      all.push_back({point_segment_distance(x, p.transforms[j].apply(s.bones[j].head),
                                            p.transforms[j].apply(s.bones[j].tail)),
                     j});
    std::sort(all.begin(), all.end());
    ASSERT_EQ(got.size(), k);
    for (std::size_t r = 0; r < k; ++r) EXPECT_EQ(got[r], all[r].second);
  }
}

TEST(SampleBonePoints, Deterministic) {
  const auto s = chain(3);
  Rng a(9), b(9);
  const auto pa = sample_bone_points(s, 1, a);
  const auto pb = sample_bone_points(s, 1, b);
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].x, pb[i].x);
}

TEST(SampleBonePoints, PointsLieOnTheirSegments) {
  const auto s = chain(3);
  Rng rng(1);
  for (const auto& bp : sample_bone_points(s, 50, rng)) {
    const auto& b = s.bones[bp.bone];
    EXPECT_LE((bp.x - b.head).cross(b.tail - b.head).norm(), 1e-12);
    const double u = (bp.x - b.head).dot(b.tail - b.head) / (b.tail - b.head).squaredNorm();
    EXPECT_GE(u, 0.0);
    EXPECT_LE(u, 1.0);
  }
}

TEST(SampleBonePoints, Count) {
  Rng rng(1);
  EXPECT_EQ(sample_bone_points(chain(3), 8, rng).size(), 24u);
}

TEST(ForwardKinematics, ZeroAnglesGiveIdentity) {
  const auto s = chain(4);
  const std::vector<double> zero(4, 0.0);
  for (const auto& t : forward_kinematics(s, zero).transforms) {
    EXPECT_LE((t.rotation - Mat3::Identity()).norm(), 1e-15);
    EXPECT_LE(t.translation.norm(), 1e-15);
  }
}

TEST(ForwardKinematics, QuarterTurnAboutZ) {
  Skeleton s;
  Bone b;
  b.head = Vec3::Zero();
  b.tail = Vec3(1, 0, 0);
  b.axis = Vec3::UnitZ();
  s.bones = {b};
  const double a = M_PI / 2;
  const Pose p = forward_kinematics(s, std::span(&a, 1));
  EXPECT_LE((p.transforms[0].apply(Vec3(1, 0, 0)) - Vec3(0, 1, 0)).norm(), 1e-15);
}

TEST(ForwardKinematics, ChildInheritsParentRotation) {
  const auto s = chain(2);
  const double a[2] = {M_PI / 2, 0.0};
  const Pose p = forward_kinematics(s, a);
  EXPECT_LE((p.transforms[1].rotation - p.transforms[0].rotation).norm(), 1e-15);
  EXPECT_LE((p.transforms[1].translation - p.transforms[0].translation).norm(), 1e-15);
}

TEST(ForwardKinematics, TransformsAreRigid) {
  Rng rng(4);
  const auto s = chain(5);
  for (int i = 0; i < 100; ++i)
    for (const auto& t : random_pose(s, rng).transforms) EXPECT_TRUE(t.is_rigid(1e-9));
}

TEST(SkeletonValidation, RejectsDegenerateBonesAndCycles) {
  Skeleton s = chain(2);
  s.bones[1].tail = s.bones[1].head;
  EXPECT_THROW(s.validate(), ConfigError);
  Skeleton c = chain(2);
  c.bones[0].parent = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(Skeleton{}.validate(), ConfigError);
}

TEST(SkeletonJson, RoundTrip) {
  const auto s = chain(3);
  const auto j = to_json(s);
  EXPECT_TRUE(j["bones"][0]["parent"].is_null());
  const auto back = skeleton_from_json(j);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back.bones[2].parent, std::optional<std::size_t>(1));
  EXPECT_EQ(back.bones[1].tail, s.bones[1].tail);
}

TEST(PoseJson, RoundTripSixteenFloatsRowMajor) {
  Rng rng(1);
  const Pose p = random_pose(chain(2), rng);
  const auto j = to_json(p);
  ASSERT_EQ(j["transforms"][0].size(), 16u);
  EXPECT_EQ(j["transforms"][0][3].get<double>(), p.transforms[0].translation.x());
  const Pose back = pose_from_json(j);
  EXPECT_EQ(back.transforms[1].rotation, p.transforms[1].rotation);
}
