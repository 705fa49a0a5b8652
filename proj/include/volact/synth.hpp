#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "volact/errors.hpp"
#include "volact/fields.hpp"
#include "volact/image_io.hpp"
#include "volact/linalg.hpp"
#include "volact/parallel.hpp"
#include "volact/renderer.hpp"
#include "volact/rng.hpp"
#include "volact/skeleton.hpp"

namespace volact {

struct Capsule {
  double radius = 0.08;
  double falloff = 0.04;
  double sigma_max = 50.0;
  Vec3 albedo = Vec3::Constant(0.5);
};

/// Articulated actor made of one capsule per bone, rigidly attached to it.
struct CapsuleActor {
  Skeleton skeleton;
  std::vector<Capsule> capsules;

  void validate() const {
    skeleton.validate();
    if (capsules.size() != skeleton.size()) throw ConfigError("actor needs one capsule per bone");
    for (const auto& c : capsules)
      if (!(c.radius > 0.0 && c.falloff > 0.0 && c.sigma_max >= 0.0))
        throw ConfigError("capsule radius and falloff must be positive, sigma_max non-negative");
  }
};

/// Density of a single capsule at distance d from its axis: sigma_max inside
/// the radius, smoothstep down to zero at radius + falloff.
inline double capsule_profile(const Capsule& cap, double d) {
  if (d <= cap.radius) return cap.sigma_max;
  if (d >= cap.radius + cap.falloff) return 0.0;
  const double u = (d - cap.radius) / cap.falloff;
  return cap.sigma_max * (1.0 - u * u * (3.0 - 2.0 * u));
}

inline double capsule_density(const CapsuleActor& actor, std::size_t b, const Vec3& x_c) {
  const auto& bone = actor.skeleton.bones[b];
  return capsule_profile(actor.capsules[b], point_segment_distance(x_c, bone.head, bone.tail));
}

struct OracleSample {
  Vec3 c = Vec3::Zero();
  double sigma = 0.0;
  std::size_t bone = 0;  // argmax bone
  Vec3 x_c = Vec3::Zero();
};

/// Canonical-pose density: max over capsules, albedo of the argmax (lowest index on ties).
inline OracleSample canonical_density(const CapsuleActor& actor, const Vec3& x_c) {
  OracleSample out;
  out.sigma = -1.0;
  for (std::size_t b = 0; b < actor.skeleton.size(); ++b) {
    const double s = capsule_density(actor, b, x_c);
    if (s > out.sigma) {
      out.sigma = s;
      out.bone = b;
    }
  }
  out.c = actor.capsules[out.bone].albedo;
  out.x_c = x_c;
  return out;
}

/// Posed density: each capsule evaluated at T_b^-1 x_v.
inline OracleSample oracle_density(const CapsuleActor& actor, const PoseContext& ctx, const Vec3& x_v) {
  OracleSample out;
  out.sigma = -1.0;
  for (std::size_t b = 0; b < actor.skeleton.size(); ++b) {
    const Vec3 x_c = ctx.inverses[b].apply(x_v);
    const double s = capsule_density(actor, b, x_c);
    if (s > out.sigma) {
      out.sigma = s;
      out.bone = b;
      out.x_c = x_c;
    }
  }
  out.c = actor.capsules[out.bone].albedo;
  return out;
}

inline OracleSample oracle_density(const CapsuleActor& actor, const Pose& pose, const Vec3& x_v) {
  return oracle_density(actor, PoseContext(actor.skeleton, pose), x_v);
}

/// Ground-truth render: cone samples composited with the oracle density at
/// each sample mean. `corr` holds the oracle's accumulated canonical points.
inline RenderOutput oracle_render(const Camera& camera, const CapsuleActor& actor, const Pose& pose,
                                  const RenderConfig& cfg) {
  cfg.validate();
  const PoseContext ctx(actor.skeleton, pose);
  RenderOutput out;
  out.width = camera.width;
  out.height = camera.height;
  const std::size_t npix = static_cast<std::size_t>(camera.width) * static_cast<std::size_t>(camera.height);
  out.color.assign(3 * npix, 0.0);
  out.corr.assign(3 * npix, 0.0);
  out.position.assign(3 * npix, 0.0);
  out.acc.assign(npix, 0.0);
  parallel_for(static_cast<std::size_t>(camera.height), [&](std::size_t row) {
    std::vector<ShadedSample> shaded;
    for (int x = 0; x < camera.width; ++x) {
      const std::size_t p = out.pixel(x, static_cast<int>(row));
      Rng rng = Rng::derive(cfg.seed, p);
      const auto samples = cast_cone_samples(generate_cone(camera, x, static_cast<double>(row)), cfg.near, cfg.far,
                                             cfg.n_samples, cfg.stratified, &rng);
      shaded.assign(samples.size(), ShadedSample{});
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto o = oracle_density(actor, ctx, samples[i].mu);
        auto& s = shaded[i];
        s.mu = samples[i].mu;
        s.t = samples[i].t_mid();
        s.delta = samples[i].delta();
        s.sigma = o.sigma;
        s.c = o.c;
        s.a = 1.0;
        s.x_c = o.x_c;
      }
      const auto res = composite(shaded);
      for (int k = 0; k < 3; ++k) {
        out.color[3 * p + static_cast<std::size_t>(k)] = res.color(k);
        out.corr[3 * p + static_cast<std::size_t>(k)] = res.canonical(k);
        out.position[3 * p + static_cast<std::size_t>(k)] = res.position(k);
      }
      out.acc[p] = res.acc;
    }
  });
  return out;
}

/// Index of the capsule whose surface is nearest to x_c (signed distance
/// d - r, lowest index on ties).
inline std::size_t dominant_bone(const CapsuleActor& actor, const Vec3& x_c) {
  std::size_t best = 0;
  double best_d = INFINITY;
  for (std::size_t b = 0; b < actor.skeleton.size(); ++b) {
    const auto& bone = actor.skeleton.bones[b];
    const double d = point_segment_distance(x_c, bone.head, bone.tail) - actor.capsules[b].radius;
    if (d < best_d) {
      best_d = d;
      best = b;
    }
  }
  return best;
}

/// Model with analytic one-hot skinning (dominant capsule) and the capsule
/// radiance; a piecewise-rigid stand-in for the learned fields.
struct AnalyticActor {
  const CapsuleActor* actor = nullptr;

  MapEval map(const PoseContext& ctx, const Vec3& x_c) const {
    const auto& t = ctx.pose.transforms[dominant_bone(*actor, x_c)];
    return {t.apply(x_c), t.rotation};
  }

  Shade shade(const PoseContext&, const Vec3& x_c, const Vec3&) const {
    const auto o = canonical_density(*actor, x_c);
    return {o.c, o.sigma, 1.0};
  }
};

/// Analytic one-hot skinning with learned radiance: isolates the radiance
/// fields from the learned deformation.
struct HybridActor {
  const CapsuleActor* actor = nullptr;
  NeuralActor neural;

  MapEval map(const PoseContext& ctx, const Vec3& x_c) const { return AnalyticActor{actor}.map(ctx, x_c); }
  Shade shade(const PoseContext& ctx, const Vec3& x_c, const Vec3& var) const { return neural.shade(ctx, x_c, var); }
};

/// One joint angle per bone, uniform in [lo, hi], through forward kinematics.
inline Pose sample_pose(const Skeleton& skeleton, const std::vector<std::pair<double, double>>& ranges, Rng& rng,
                        std::vector<double>* angles_out = nullptr) {
  if (ranges.size() != skeleton.size()) throw ConfigError("sample_pose: one angle range per bone required");
  std::vector<double> angles(ranges.size());
  for (std::size_t j = 0; j < ranges.size(); ++j) {
    const auto [lo, hi] = ranges[j];
    if (hi < lo) throw ConfigError("sample_pose: empty angle range");
    angles[j] = lo == hi ? lo : rng.uniform(lo, hi);
  }
  if (angles_out) *angles_out = angles;
  return forward_kinematics(skeleton, angles);
}

/// Cameras evenly spaced on a ring around the y axis, looking at `target`,
/// with elevations alternating between +elevation and -elevation.
inline std::vector<Camera> ring_cameras(std::size_t n, double radius, double elevation, double focal, int width,
                                        int height, const Vec3& target = Vec3::Zero()) {
  std::vector<Camera> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double az = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n);
    const double el = (i % 2 == 0 ? 1.0 : -1.0) * elevation;
    const Vec3 eye = target + radius * Vec3(std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az));
    out.push_back(Camera::look_at(eye, target, Vec3::UnitY(), focal, width, height));
  }
  return out;
}

/// The default desk actor: a vertical 3-bone chain of capsules fitting in
/// [-0.5, 0.5]^3.
inline CapsuleActor default_actor() {
  CapsuleActor a;
  const double ys[4] = {-0.36, -0.12, 0.12, 0.36};
  const Vec3 axes[3] = {Vec3::UnitZ(), Vec3::UnitZ(), Vec3::UnitX()};
  const Vec3 albedos[3] = {{0.9, 0.2, 0.2}, {0.2, 0.8, 0.3}, {0.2, 0.3, 0.9}};
  for (std::size_t j = 0; j < 3; ++j) {
    Bone b;
    b.head = Vec3(0.0, ys[j], 0.0);
    b.tail = Vec3(0.0, ys[j + 1], 0.0);
    b.parent = j == 0 ? std::nullopt : std::optional<std::size_t>(j - 1);
    b.axis = axes[j];
    a.skeleton.bones.push_back(b);
    a.capsules.push_back({0.08, 0.04, 50.0, albedos[j]});
  }
  return a;
}

inline nlohmann::json to_json(const CapsuleActor& a) {
  nlohmann::json caps = nlohmann::json::array();
  for (const auto& c : a.capsules)
    caps.push_back({{"radius", c.radius}, {"falloff", c.falloff}, {"sigma_max", c.sigma_max},
                    {"albedo", vec_to_json(c.albedo)}});
  return {{"skeleton", to_json(a.skeleton)}, {"capsules", caps}};
}

inline CapsuleActor actor_from_json(const nlohmann::json& j) {
  CapsuleActor a;
  a.skeleton = skeleton_from_json(j.at("skeleton"));
  for (const auto& jc : j.at("capsules"))
    a.capsules.push_back({jc.at("radius").get<double>(), jc.at("falloff").get<double>(),
                          jc.at("sigma_max").get<double>(), vec_from_json(jc.at("albedo"))});
  a.validate();
  return a;
}

/// One image of the dataset: pose `frame` seen from camera `camera`.
struct FrameRecord {
  std::string frame;
  std::string camera;
  std::string image;  // path relative to the dataset dir
};

struct Dataset {
  std::filesystem::path dir;
  CapsuleActor actor;
  RenderConfig render;
  std::vector<std::string> camera_ids;
  std::vector<Camera> cameras;
  std::vector<std::string> frame_ids;
  std::vector<Pose> poses;
  std::vector<std::vector<double>> angles;  // per frame, may be empty
  std::vector<FrameRecord> records;

  std::size_t camera_index(const std::string& id) const {
    const auto it = std::find(camera_ids.begin(), camera_ids.end(), id);
    if (it == camera_ids.end()) throw ConfigError("unknown camera id " + id);
    return static_cast<std::size_t>(it - camera_ids.begin());
  }
  std::size_t frame_index(const std::string& id) const {
    const auto it = std::find(frame_ids.begin(), frame_ids.end(), id);
    if (it == frame_ids.end()) throw ConfigError("unknown frame id " + id);
    return static_cast<std::size_t>(it - frame_ids.begin());
  }
  Image load_image(const FrameRecord& r) const { return read_ppm(dir / r.image); }
};

inline std::string numbered_id(const char* prefix, std::size_t i, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, digits, i);
  return buf;
}

inline Image to_image(const RenderOutput& r) { return Image(r.width, r.height, r.color); }

inline nlohmann::json manifest_json(const Dataset& d) {
  nlohmann::json cams = nlohmann::json::array();
  for (const auto& id : d.camera_ids) cams.push_back({{"id", id}, {"path", "cameras/" + id + ".json"}});
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& id : d.frame_ids) frames.push_back({{"id", id}, {"path", "poses/" + id + ".json"}});
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : d.records) recs.push_back({{"frame", r.frame}, {"camera", r.camera}, {"image", r.image}});
  return {{"actor", to_json(d.actor)}, {"render", d.render}, {"cameras", cams}, {"frames", frames}, {"records", recs}};
}

/// Renders every (pose, camera) pair with the oracle and writes the dataset
/// layout: manifest.json, cameras/<id>.json, poses/<frame>.json,
/// images/<frame>_<cam>.ppm.
inline Dataset write_dataset(const std::filesystem::path& dir, const CapsuleActor& actor,
                             const std::vector<Camera>& cameras, const std::vector<Pose>& poses,
                             const RenderConfig& render, const std::vector<std::vector<double>>& angles = {}) {
  actor.validate();
  Dataset d;
  d.dir = dir;
  d.actor = actor;
  d.render = render;
  d.cameras = cameras;
  d.poses = poses;
  d.angles = angles;
  d.angles.resize(poses.size());
  for (std::size_t i = 0; i < cameras.size(); ++i) d.camera_ids.push_back(numbered_id("c", i, 2));
  for (std::size_t i = 0; i < poses.size(); ++i) d.frame_ids.push_back(numbered_id("f", i, 3));
  for (std::size_t f = 0; f < poses.size(); ++f)
    for (std::size_t c = 0; c < cameras.size(); ++c)
      d.records.push_back({d.frame_ids[f], d.camera_ids[c], "images/" + d.frame_ids[f] + "_" + d.camera_ids[c] + ".ppm"});

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (std::size_t c = 0; c < cameras.size(); ++c)
    write_json_file(dir / "cameras" / (d.camera_ids[c] + ".json"), to_json(cameras[c]));
  for (std::size_t f = 0; f < poses.size(); ++f) {
    auto jp = to_json(poses[f]);
    if (!d.angles[f].empty()) jp["angles"] = d.angles[f];
    write_json_file(dir / "poses" / (d.frame_ids[f] + ".json"), jp);
  }
  for (const auto& r : d.records) {
    const auto& cam = cameras[d.camera_index(r.camera)];
    const auto& pose = poses[d.frame_index(r.frame)];
    write_ppm(dir / r.image, to_image(oracle_render(cam, actor, pose, render)));
  }
  write_json_file(dir / "manifest.json", manifest_json(d));
  return d;
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  const auto m = read_json_file(dir / "manifest.json");
  Dataset d;
  d.dir = dir;
  try {
    d.actor = actor_from_json(m.at("actor"));
    d.render = m.at("render").get<RenderConfig>();
    for (const auto& jc : m.at("cameras")) {
      d.camera_ids.push_back(jc.at("id").get<std::string>());
      d.cameras.push_back(camera_from_json(read_json_file(dir / jc.at("path").get<std::string>())));
    }
    for (const auto& jf : m.at("frames")) {
      d.frame_ids.push_back(jf.at("id").get<std::string>());
      const auto jp = read_json_file(dir / jf.at("path").get<std::string>());
      d.poses.push_back(pose_from_json(jp));
      d.angles.push_back(jp.contains("angles") ? jp["angles"].get<std::vector<double>>() : std::vector<double>{});
      if (d.poses.back().size() != d.actor.skeleton.size()) throw ConfigError("pose bone count mismatch");
    }
    for (const auto& jr : m.at("records"))
      d.records.push_back({jr.at("frame").get<std::string>(), jr.at("camera").get<std::string>(),
                           jr.at("image").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return d;
}

}  // namespace volact
