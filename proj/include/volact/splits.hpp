#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "volact/errors.hpp"
#include "volact/image_io.hpp"
#include "volact/parallel.hpp"
#include "volact/rng.hpp"
#include "volact/skeleton.hpp"
#include "volact/synth.hpp"

namespace volact {

/// Points spread uniformly by area over each capsule surface (cylinder plus
/// hemispherical caps), tagged with their bone.
inline std::vector<BonePoint> capsule_surface_probes(const CapsuleActor& actor, std::size_t per_bone,
                                                     std::uint64_t seed = 0) {
  Rng rng(seed);
  std::vector<BonePoint> out;
  out.reserve(per_bone * actor.skeleton.size());
  for (std::size_t b = 0; b < actor.skeleton.size(); ++b) {
    const auto& bone = actor.skeleton.bones[b];
    const double r = actor.capsules[b].radius;
    const Vec3 axis_vec = bone.tail - bone.head;
    const double len = axis_vec.norm();
    const Vec3 a = axis_vec / len;
    const Vec3 u = a.unitOrthogonal();
    const Vec3 v = a.cross(u);
    const double cyl = 2.0 * M_PI * r * len;
    const double caps = 4.0 * M_PI * r * r;
    for (std::size_t i = 0; i < per_bone; ++i) {
      if (rng.uniform() * (cyl + caps) < cyl) {
        const double t = rng.uniform() * len;
        const double phi = 2.0 * M_PI * rng.uniform();
        out.push_back({bone.head + t * a + r * (std::cos(phi) * u + std::sin(phi) * v), b});
      } else {
        Vec3 d(rng.normal(), rng.normal(), rng.normal());
        d.normalize();
        const Vec3 center = d.dot(a) >= 0.0 ? bone.tail : bone.head;
        out.push_back({center + r * d, b});
      }
    }
  }
  return out;
}

/// Mean probe displacement between two root-normalized poses.
inline double pose_distance(const Pose& a, const Pose& b, std::span<const BonePoint> probes, std::size_t root = 0) {
  if (probes.empty()) throw DegenerateInput("pose_distance: no probe points");
  if (a.size() != b.size()) throw DegenerateInput("pose_distance: poses have different bone counts");
  const Pose na = remove_root(a, root);
  const Pose nb = remove_root(b, root);
  double s = 0.0;
  for (const auto& p : probes) s += (na.transforms[p.bone].apply(p.x) - nb.transforms[p.bone].apply(p.x)).norm();
  return s / static_cast<double>(probes.size());
}

inline Eigen::MatrixXd distance_matrix(const std::vector<Pose>& poses, std::span<const BonePoint> probes,
                                       std::size_t root = 0) {
  const std::size_t n = poses.size();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j)
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pose_distance(poses[i], poses[j], probes, root);
  });
  for (Eigen::Index i = 0; i < d.rows(); ++i)
    for (Eigen::Index j = 0; j < i; ++j) d(i, j) = d(j, i);
  return d;
}

struct KMedoidsResult {
  std::vector<std::size_t> assignments;  // cluster index per point
  std::vector<std::size_t> medoids;      // point index per cluster
  std::vector<double> cost_history;      // total cost after initialization and each iteration
  double cost = 0.0;
};

inline double clustering_cost(const Eigen::MatrixXd& d, const std::vector<std::size_t>& medoids,
                              std::vector<std::size_t>* assignments = nullptr) {
  const auto n = static_cast<std::size_t>(d.rows());
  if (assignments) assignments->assign(n, 0);
  double cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < medoids.size(); ++k)
      if (d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(medoids[k])) <
          d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(medoids[best])))
        best = k;
    if (assignments) (*assignments)[i] = best;
    cost += d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(medoids[best]));
  }
  return cost;
}

/// Alternating K-Medoids: seeded farthest-point initialization, then
/// assignment / per-cluster medoid update until the medoids stop changing.
inline KMedoidsResult kmedoids(const Eigen::MatrixXd& d, std::size_t k, std::uint64_t seed,
                               std::size_t max_iters = 100) {
  const auto n = static_cast<std::size_t>(d.rows());
  if (d.rows() != d.cols()) throw DegenerateInput("kmedoids: distance matrix must be square");
  if (k == 0 || n < k) throw DegenerateInput("kmedoids: need 1 <= K <= N");
  auto at = [&](std::size_t i, std::size_t j) { return d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); };

  Rng rng(seed);
  KMedoidsResult r;
  r.medoids.push_back(rng.index(n));
  std::vector<double> nearest(n);
  for (std::size_t i = 0; i < n; ++i) nearest[i] = at(i, r.medoids[0]);
  while (r.medoids.size() < k) {
    std::size_t far = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::find(r.medoids.begin(), r.medoids.end(), i) != r.medoids.end()) continue;
      if (far == n || nearest[i] > nearest[far]) far = i;
    }
    r.medoids.push_back(far);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], at(i, far));
  }

  r.cost = clustering_cost(d, r.medoids, &r.assignments);
  r.cost_history.push_back(r.cost);
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (std::size_t c = 0; c < k; ++c) {
      double best_cost = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (r.assignments[i] == c) best_cost += at(i, r.medoids[c]);
      std::size_t best = r.medoids[c];
      for (std::size_t m = 0; m < n; ++m) {
        if (r.assignments[m] != c) continue;
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          if (r.assignments[i] == c) s += at(i, m);
        if (s < best_cost) {
          best_cost = s;
          best = m;
        }
      }
      if (best != r.medoids[c]) {
        r.medoids[c] = best;
        changed = true;
      }
    }
    r.cost = clustering_cost(d, r.medoids, &r.assignments);
    r.cost_history.push_back(r.cost);
    if (!changed) break;
  }
  return r;
}

/// Cluster whose medoid has the largest mean distance to the other medoids;
/// ties go to the lowest index.
inline std::size_t select_ood(const std::vector<std::size_t>& medoids, const Eigen::MatrixXd& d) {
  if (medoids.size() < 2) throw DegenerateInput("select_ood: need at least two medoids");
  std::size_t best = 0;
  double best_mean = -INFINITY;
  for (std::size_t a = 0; a < medoids.size(); ++a) {
    double s = 0.0;
    for (std::size_t b = 0; b < medoids.size(); ++b)
      if (b != a) s += d(static_cast<Eigen::Index>(medoids[a]), static_cast<Eigen::Index>(medoids[b]));
    const double mean = s / static_cast<double>(medoids.size() - 1);
    if (mean > best_mean) {
      best_mean = mean;
      best = a;
    }
  }
  return best;
}

struct SplitResult {
  std::vector<std::string> frames;       // clustered frames, in input order
  std::vector<std::size_t> assignments;  // cluster per clustered frame
  std::vector<std::string> medoids;      // medoid frame per cluster
  std::size_t ood_cluster = 0;
  std::vector<std::string> train;
  std::vector<std::string> val_ind;
  std::vector<std::string> val_ood;
  std::vector<std::string> withheld;  // reserved before clustering
  std::uint64_t seed = 0;

  const std::vector<std::string>& named(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val_ind") return val_ind;
    if (name == "val_ood") return val_ood;
    if (name == "withheld") return withheld;
    throw ConfigError("unknown split '" + name + "' (expected train, val_ind, val_ood or withheld)");
  }
};

/// The OOD cluster goes to val_ood; every other cluster is shuffled and
/// split 2:1, train taking ceil(2n/3). Lists keep the input frame order.
inline SplitResult build_splits(const std::vector<std::string>& frames, const std::vector<std::size_t>& assignments,
                                std::size_t ood_cluster, std::uint64_t seed) {
  if (frames.size() != assignments.size()) throw DegenerateInput("build_splits: one assignment per frame required");
  SplitResult s;
  s.frames = frames;
  s.assignments = assignments;
  s.ood_cluster = ood_cluster;
  s.seed = seed;
  const std::size_t k = assignments.empty() ? 0 : *std::max_element(assignments.begin(), assignments.end()) + 1;
  std::vector<bool> is_train(frames.size(), false), is_val(frames.size(), false);
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < frames.size(); ++i)
      if (assignments[i] == c) members.push_back(i);
    if (c == ood_cluster) continue;
    Rng rng = Rng::derive(seed, c);
    rng.shuffle(members);
    const std::size_t n_train = (2 * members.size() + 2) / 3;
    for (std::size_t i = 0; i < members.size(); ++i) (i < n_train ? is_train : is_val)[members[i]] = true;
  }
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (assignments[i] == ood_cluster)
      s.val_ood.push_back(frames[i]);
    else if (is_train[i])
      s.train.push_back(frames[i]);
    else
      s.val_ind.push_back(frames[i]);
  }
  return s;
}

struct SplitConfig {
  std::size_t K = 10;
  std::uint64_t seed = 0;
  std::size_t probes_per_bone = 256;
  std::size_t withhold_start = 0;
  std::size_t withhold_count = 0;  // contiguous frames reserved before clustering
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SplitConfig, K, seed, probes_per_bone, withhold_start, withhold_count)

/// Full protocol on a dataset's poses. `dist_out` receives the distance
/// matrix over the clustered frames.
inline SplitResult make_splits(const std::vector<std::string>& frame_ids, const std::vector<Pose>& poses,
                               const CapsuleActor& actor, const SplitConfig& cfg,
                               Eigen::MatrixXd* dist_out = nullptr) {
  if (frame_ids.size() != poses.size()) throw DegenerateInput("make_splits: one pose per frame required");
  std::vector<std::string> ids;
  std::vector<Pose> kept;
  std::vector<std::string> withheld;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    if (i >= cfg.withhold_start && i < cfg.withhold_start + cfg.withhold_count) {
      withheld.push_back(frame_ids[i]);
    } else {
      ids.push_back(frame_ids[i]);
      kept.push_back(poses[i]);
    }
  }
  if (kept.size() < cfg.K)
    throw DegenerateInput("cannot form " + std::to_string(cfg.K) + " clusters from " + std::to_string(kept.size()) +
                          " frames");
  const auto probes = capsule_surface_probes(actor, cfg.probes_per_bone, cfg.seed);
  const Eigen::MatrixXd d = distance_matrix(kept, probes, actor.skeleton.root());
  const auto km = kmedoids(d, cfg.K, cfg.seed);
  const std::size_t ood = select_ood(km.medoids, d);
  SplitResult s = build_splits(ids, km.assignments, ood, cfg.seed);
  for (std::size_t m : km.medoids) s.medoids.push_back(ids[m]);
  s.withheld = withheld;
  if (dist_out) *dist_out = d;
  return s;
}

inline nlohmann::json to_json(const SplitResult& s) {
  return {{"frames", s.frames},   {"assignments", s.assignments}, {"medoids", s.medoids},
          {"ood_cluster", s.ood_cluster}, {"train", s.train},     {"val_ind", s.val_ind},
          {"val_ood", s.val_ood}, {"withheld", s.withheld},       {"seed", s.seed}};
}

inline SplitResult splits_from_json(const nlohmann::json& j) {
  SplitResult s;
  try {
    s.frames = j.at("frames").get<std::vector<std::string>>();
    s.assignments = j.at("assignments").get<std::vector<std::size_t>>();
    s.medoids = j.at("medoids").get<std::vector<std::string>>();
    s.ood_cluster = j.at("ood_cluster").get<std::size_t>();
    s.train = j.at("train").get<std::vector<std::string>>();
    s.val_ind = j.at("val_ind").get<std::vector<std::string>>();
    s.val_ood = j.at("val_ood").get<std::vector<std::string>>();
    s.withheld = j.value("withheld", std::vector<std::string>{});
    s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed splits file: ") + e.what());
  }
  return s;
}

inline void write_distance_csv(const std::filesystem::path& path, const Eigen::MatrixXd& d,
                               const std::vector<std::string>& ids) {
  ensure_parent_dir(path);
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.precision(10);
  f << "frame";
  for (const auto& id : ids) f << "," << id;
  f << "\n";
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    f << ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < d.cols(); ++j) f << "," << d(i, j);
    f << "\n";
  }
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace volact
