#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "volact/errors.hpp"
#include "volact/linalg.hpp"
#include "volact/rng.hpp"

namespace volact {

/// A bone is a canonical-space segment. `axis` is the single joint axis used
/// by forward_kinematics (rotation about the head).
struct Bone {
  Vec3 head = Vec3::Zero();
  Vec3 tail = Vec3::UnitX();
  std::optional<std::size_t> parent;
  Vec3 axis = Vec3::UnitZ();
};

struct Skeleton {
  std::vector<Bone> bones;

  std::size_t size() const { return bones.size(); }

  /// Index of the first parentless bone.
  std::size_t root() const {
    for (std::size_t i = 0; i < bones.size(); ++i)
      if (!bones[i].parent) return i;
    return 0;
  }

  /// Throws ConfigError unless B >= 1, head != tail and parents are acyclic.
  void validate() const {
    if (bones.empty()) throw ConfigError("skeleton has no bones");
    for (std::size_t i = 0; i < bones.size(); ++i) {
      if ((bones[i].head - bones[i].tail).norm() == 0.0)
        throw ConfigError("bone " + std::to_string(i) + " has coincident head and tail");
      std::size_t steps = 0;
      for (auto p = bones[i].parent; p; p = bones[*p].parent) {
        if (*p >= bones.size()) throw ConfigError("bone " + std::to_string(i) + " has an invalid parent");
        if (++steps > bones.size()) throw ConfigError("skeleton parent graph has a cycle");
      }
    }
  }
};

/// World transform per bone, applied to canonical points.
struct Pose {
  std::vector<Transform> transforms;

  std::size_t size() const { return transforms.size(); }

  static Pose identity(std::size_t bones) { return Pose{std::vector<Transform>(bones)}; }
};

/// (B+1) weights: bones first, background last.
using SkinningWeights = std::vector<double>;

inline bool on_simplex(std::span<const double> w, double tol = 1e-9) {
  double sum = 0.0;
  for (double v : w) {
    if (v < 0.0) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= tol;
}

/// Forward linear blend skinning with the background (identity) slot.
inline Vec3 lbs(std::span<const double> w, const Pose& pose, const Vec3& x_c) {
  const std::size_t b = pose.size();
  Mat3 rot = w[b] * Mat3::Identity();
  Vec3 trans = Vec3::Zero();
  for (std::size_t j = 0; j < b; ++j) {
    rot += w[j] * pose.transforms[j].rotation;
    trans += w[j] * pose.transforms[j].translation;
  }
  return rot * x_c + trans;
}

/// Bone segments mapped through their pose transforms.
struct PosedSegments {
  std::vector<Vec3> heads;
  std::vector<Vec3> tails;

  PosedSegments() = default;
  PosedSegments(const Skeleton& skeleton, const Pose& pose) {
    heads.reserve(skeleton.size());
    tails.reserve(skeleton.size());
    for (std::size_t j = 0; j < skeleton.size(); ++j) {
      heads.push_back(pose.transforms[j].apply(skeleton.bones[j].head));
      tails.push_back(pose.transforms[j].apply(skeleton.bones[j].tail));
    }
  }

  std::size_t size() const { return heads.size(); }

  double distance(std::size_t j, const Vec3& x) const { return point_segment_distance(x, heads[j], tails[j]); }

  double min_distance(const Vec3& x) const {
    double best = INFINITY;
    for (std::size_t j = 0; j < size(); ++j) best = std::min(best, distance(j, x));
    return best;
  }
};

/// min(K, B) bone indices nearest to x_v (point-to-segment distance against the
/// posed bones), ascending by distance with ties broken by lower index.
inline std::vector<std::size_t> nearest_bones(const Vec3& x_v, const PosedSegments& posed, std::size_t k) {
  const std::size_t b = posed.size();
  std::vector<std::pair<double, std::size_t>> dist(b);
  for (std::size_t j = 0; j < b; ++j) dist[j] = {posed.distance(j, x_v), j};
  const std::size_t n = std::min(k, b);
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(n), dist.end());
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = dist[i].second;
  return out;
}

inline std::vector<std::size_t> nearest_bones(const Vec3& x_v, const Skeleton& skeleton, const Pose& pose,
                                              std::size_t k) {
  return nearest_bones(x_v, PosedSegments(skeleton, pose), k);
}

struct BonePoint {
  Vec3 x = Vec3::Zero();
  std::size_t bone = 0;
};

/// n_per_bone points uniformly along every canonical bone segment.
inline std::vector<BonePoint> sample_bone_points(const Skeleton& skeleton, std::size_t n_per_bone, Rng& rng) {
  std::vector<BonePoint> out;
  out.reserve(skeleton.size() * n_per_bone);
  for (std::size_t j = 0; j < skeleton.size(); ++j) {
    const auto& bone = skeleton.bones[j];
    for (std::size_t i = 0; i < n_per_bone; ++i) {
      const double u = rng.uniform();
      out.push_back({bone.head + u * (bone.tail - bone.head), j});
    }
  }
  return out;
}

/// Composes each bone's rotation about its head with its parent's world
/// transform. Zero angles give the identity pose.
inline Pose forward_kinematics(const Skeleton& skeleton, std::span<const double> angles) {
  if (angles.size() != skeleton.size()) throw ConfigError("forward_kinematics: angle count must equal bone count");
  const std::size_t b = skeleton.size();
  Pose pose = Pose::identity(b);
  std::vector<bool> done(b, false);
  auto resolve = [&](auto&& self, std::size_t j) -> const Transform& {
    if (!done[j]) {
      const auto& bone = skeleton.bones[j];
      const Transform local = Transform::rotate_about(bone.axis, angles[j], bone.head);
      pose.transforms[j] = bone.parent ? self(self, *bone.parent) * local : local;
      done[j] = true;
    }
    return pose.transforms[j];
  };
  for (std::size_t j = 0; j < b; ++j) resolve(resolve, j);
  return pose;
}

/// Pose with the root bone's transform removed (left-composed with its inverse).
inline Pose remove_root(const Pose& pose, std::size_t root) {
  const Transform inv = pose.transforms[root].inverse();
  Pose out = pose;
  for (auto& t : out.transforms) t = inv * t;
  return out;
}

// JSON

inline nlohmann::json vec_to_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json to_json(const Skeleton& s) {
  nlohmann::json bones = nlohmann::json::array();
  for (const auto& b : s.bones) {
    nlohmann::json jb;
    jb["head"] = vec_to_json(b.head);
    jb["tail"] = vec_to_json(b.tail);
    jb["parent"] = b.parent ? nlohmann::json(*b.parent) : nlohmann::json(nullptr);
    jb["axis"] = vec_to_json(b.axis);
    bones.push_back(jb);
  }
  return {{"bones", bones}};
}

inline Skeleton skeleton_from_json(const nlohmann::json& j) {
  Skeleton s;
  for (const auto& jb : j.at("bones")) {
    Bone b;
    b.head = vec_from_json(jb.at("head"));
    b.tail = vec_from_json(jb.at("tail"));
    if (jb.contains("parent") && !jb["parent"].is_null()) b.parent = jb["parent"].get<std::size_t>();
    if (jb.contains("axis")) b.axis = vec_from_json(jb["axis"]);
    s.bones.push_back(b);
  }
  s.validate();
  return s;
}

inline nlohmann::json to_json(const Pose& p) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : p.transforms) arr.push_back(t.to_row_major());
  return {{"transforms", arr}};
}

inline Pose pose_from_json(const nlohmann::json& j) {
  Pose p;
  for (const auto& jt : j.at("transforms")) {
    if (jt.size() != 16) throw ConfigError("pose transform must have 16 entries");
    p.transforms.push_back(Transform::from_row_major(jt.get<std::array<double, 16>>()));
  }
  return p;
}

}  // namespace volact
