#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "volact/config.hpp"
#include "volact/errors.hpp"
#include "volact/fields.hpp"
#include "volact/image_io.hpp"
#include "volact/param_store.hpp"
#include "volact/renderer.hpp"
#include "volact/splits.hpp"
#include "volact/synth.hpp"
#include "volact/training.hpp"

// Subcommand implementations shared by the command-line tool, the tests and
// the acceptance runner.
namespace volact {

namespace fs = std::filesystem;

// Model files

/// Fields plus their parameters. A checkpoint `x.bin` is accompanied by
/// `x.bin.json` holding the field config and the skeleton.
struct Model {
  FieldConfig config;
  Skeleton skeleton;
  ParamStore params;
  ActorFields fields;

  Model() = default;
  Model(const FieldConfig& cfg, const Skeleton& skel) : config(cfg), skeleton(skel) {
    fields = ActorFields(config, skeleton.size(), params);
  }
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
};

inline fs::path model_sidecar(const fs::path& checkpoint) { return checkpoint.string() + ".json"; }
inline fs::path optimizer_path(const fs::path& checkpoint) { return checkpoint.string() + ".opt"; }

inline void save_model(const fs::path& checkpoint, const Model& m) {
  ensure_parent_dir(checkpoint);
  save_checkpoint(checkpoint, m.params);
  write_json_file(model_sidecar(checkpoint), {{"fields", m.config}, {"skeleton", to_json(m.skeleton)}});
}

inline std::unique_ptr<Model> load_model(const fs::path& checkpoint) {
  const auto meta = read_json_file(model_sidecar(checkpoint));
  std::unique_ptr<Model> m;
  try {
    m = std::make_unique<Model>(meta.at("fields").get<FieldConfig>(), skeleton_from_json(meta.at("skeleton")));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed model description " + model_sidecar(checkpoint).string() + ": " + e.what());
  }
  const ParamStore loaded = load_checkpoint(checkpoint);
  if (!loaded.same_layout(m->params)) throw IoError("checkpoint layout does not match " + model_sidecar(checkpoint).string());
  std::copy(loaded.values().begin(), loaded.values().end(), m->params.values().begin());
  return m;
}

// Paths

inline fs::path splits_path(const RunConfig& cfg) { return fs::path(cfg.dataset) / "splits.json"; }
inline fs::path checkpoint_path(const RunConfig& cfg) { return fs::path(cfg.output) / "checkpoint.bin"; }
inline fs::path log_path(const RunConfig& cfg) { return fs::path(cfg.output) / "train_log.ndjson"; }

// synth

inline Dataset cmd_synth(const RunConfig& cfg) {
  const CapsuleActor actor = default_actor();
  Rng rng(cfg.synth.seed);
  std::vector<Pose> poses;
  std::vector<std::vector<double>> angles(cfg.synth.poses);
  const auto ranges = cfg.synth.angle_ranges(actor.skeleton.size());
  for (std::size_t i = 0; i < cfg.synth.poses; ++i) poses.push_back(sample_pose(actor.skeleton, ranges, rng, &angles[i]));
  RenderConfig rc = cfg.render;
  rc.skeleton_margin = 0.0;
  return write_dataset(cfg.dataset, actor, cfg.synth.make_cameras(), poses, rc, angles);
}

// split

inline SplitResult cmd_split(const RunConfig& cfg) {
  const Dataset d = read_dataset(cfg.dataset);
  Eigen::MatrixXd dist;
  const SplitResult s = make_splits(d.frame_ids, d.poses, d.actor, cfg.split, &dist);
  write_json_file(splits_path(cfg), to_json(s));
  write_distance_csv(fs::path(cfg.dataset) / "pose_distances.csv", dist, s.frames);
  return s;
}

inline SplitResult read_splits(const RunConfig& cfg) { return splits_from_json(read_json_file(splits_path(cfg))); }

// train

/// Poses and images of the listed frames, every camera.
inline TrainingSet make_training_set(const Dataset& d, const std::vector<std::string>& frames) {
  if (frames.empty()) throw ConfigError("no frames selected");
  TrainingSet t;
  std::vector<std::size_t> context_of(d.frame_ids.size(), SIZE_MAX);
  for (const auto& f : frames) {
    const std::size_t fi = d.frame_index(f);
    context_of[fi] = t.contexts.size();
    t.contexts.emplace_back(d.actor.skeleton, d.poses[fi]);
  }
  for (const auto& r : d.records) {
    const std::size_t ctx = context_of[d.frame_index(r.frame)];
    if (ctx == SIZE_MAX) continue;
    t.views.push_back({d.cameras[d.camera_index(r.camera)], ctx, d.load_image(r)});
  }
  return t;
}

struct EvalRow {
  std::string frame;
  std::string camera;
  double psnr = 0.0;
  double failure_fraction = 0.0;
};

struct EvalOptions {
  std::optional<FailureStrategy> strategy;
  bool analytic_skinning = false;  // learned radiance, analytic one-hot skinning
  std::size_t max_cameras = 0;      // 0: all
};

inline RenderConfig render_settings(const RunConfig& cfg, const std::optional<FailureStrategy>& strategy) {
  RenderConfig rc = cfg.render;
  if (strategy) rc.failure_strategy = *strategy;
  return rc;
}

/// Renders every (frame, camera) of `frames` and compares with the dataset images.
inline std::vector<EvalRow> evaluate_frames(const RunConfig& cfg, const Model& m, const Dataset& d,
                                            const std::vector<std::string>& frames, const EvalOptions& opt = {}) {
  if (frames.empty()) throw ConfigError("cannot evaluate an empty split");
  const RenderConfig rc = render_settings(cfg, opt.strategy);
  const NeuralActor neural = make_actor(m.fields, m.params, rc);
  std::vector<EvalRow> rows;
  for (const auto& f : frames) {
    const std::size_t fi = d.frame_index(f);
    const PoseContext ctx(m.skeleton, d.poses[fi]);
    std::size_t used = 0;
    for (const auto& r : d.records) {
      if (r.frame != f) continue;
      if (opt.max_cameras && used++ >= opt.max_cameras) break;
      const Camera& cam = d.cameras[d.camera_index(r.camera)];
      const RenderOutput out = opt.analytic_skinning
                                   ? render_image(cam, ctx, HybridActor{&d.actor, neural}, rc, cfg.rootfind)
                                   : render_image(cam, ctx, neural, rc, cfg.rootfind);
      rows.push_back({f, r.camera, psnr(out.color, d.load_image(r).rgb), out.stats.failure_fraction()});
    }
  }
  return rows;
}

inline double mean_psnr(const std::vector<EvalRow>& rows) {
  double s = 0.0;
  for (const auto& r : rows) s += r.psnr;
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

struct TrainOptions {
  bool resume = false;
  std::function<void(const StepReport&)> on_step;  // called for every logged step
};

struct TrainSummary {
  std::size_t steps = 0;
  double final_loss = 0.0;
  std::optional<double> val_ind_psnr;
};

inline TrainSummary cmd_train(const RunConfig& cfg, const TrainOptions& opt = {}) {
  const Dataset d = read_dataset(cfg.dataset);
  const SplitResult splits = read_splits(cfg);
  const TrainingSet data = make_training_set(d, splits.train);

  const fs::path ckpt = checkpoint_path(cfg);
  std::unique_ptr<Model> m;
  const bool resuming = opt.resume && fs::exists(ckpt);
  if (resuming) {
    m = load_model(ckpt);
  } else {
    m = std::make_unique<Model>(cfg.fields, d.actor.skeleton);
    m->fields.init(m->params, cfg.seed);
  }
  fs::create_directories(cfg.output);
  write_json_file(fs::path(cfg.output) / "config.json", cfg);

  Trainer trainer(m->fields, m->params, m->skeleton, cfg.train, cfg.render, cfg.rootfind);
  if (resuming && fs::exists(optimizer_path(ckpt))) {
    load_optimizer(optimizer_path(ckpt), trainer.optimizer(), m->params.size());
    trainer.set_step_count(trainer.optimizer().t);
  }

  std::ofstream log(log_path(cfg), resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open " + log_path(cfg).string());
  auto checkpoint = [&] {
    save_model(ckpt, *m);
    save_optimizer(optimizer_path(ckpt), trainer.optimizer(), m->params.size());
  };
  auto evaluate = [&](std::size_t step) {
    if (splits.val_ind.empty()) return std::optional<double>{};
    const double p = mean_psnr(evaluate_frames(cfg, *m, d, splits.val_ind));
    log << nlohmann::json{{"step", step}, {"eval", "val_ind"}, {"psnr", p}}.dump() << "\n" << std::flush;
    return std::optional<double>(p);
  };

  TrainSummary summary;
  const auto& tc = cfg.train;
  while (trainer.step_count() < tc.steps) {
    StepReport rep;
    try {
      rep = trainer.step(data);
    } catch (const NonFiniteLoss& e) {
      write_json_file(fs::path(cfg.output) / "nonfinite.json",
                      {{"step", trainer.step_count()}, {"error", e.what()}});
      throw;
    }
    summary.final_loss = rep.loss;
    const std::size_t done = trainer.step_count();
    if (tc.log_every && (rep.step % tc.log_every == 0 || done == tc.steps)) {
      log << to_json(rep).dump() << "\n" << std::flush;
      if (opt.on_step) opt.on_step(rep);
    }
    if (tc.checkpoint_every && done % tc.checkpoint_every == 0) checkpoint();
    if (tc.eval_every && done % tc.eval_every == 0 && done < tc.steps) evaluate(done);
  }
  checkpoint();
  summary.steps = trainer.step_count();
  summary.val_ind_psnr = evaluate(summary.steps);
  return summary;
}

// render

struct RenderOptions {
  bool ao = true;
  bool delta = true;
  std::optional<FailureStrategy> strategy;
  std::optional<int> width;  // rescales the camera, keeping the field of view
  std::optional<int> height;
};

inline RenderOutput render_model(const RunConfig& cfg, const Model& m, const Pose& pose, const Camera& camera,
                                 const RenderOptions& opt) {
  RenderConfig rc = render_settings(cfg, opt.strategy);
  rc.ao_enabled = rc.ao_enabled && opt.ao;
  rc.delta_enabled = rc.delta_enabled && opt.delta;
  Camera cam = camera;
  if (opt.width || opt.height) cam = camera.scaled(opt.width.value_or(camera.width), opt.height.value_or(camera.height));
  if (pose.size() != m.skeleton.size()) throw ConfigError("pose does not match the model's skeleton");
  const PoseContext ctx(m.skeleton, pose);
  return render_image(cam, ctx, make_actor(m.fields, m.params, rc), rc, cfg.rootfind);
}

/// Writes `<out>.ppm`, `<out>.corr.f32` (+ sidecar) and `<out>.stats.json`.
inline RenderOutput cmd_render(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& pose_file,
                               const fs::path& camera_file, const fs::path& out, const RenderOptions& opt) {
  const auto m = load_model(checkpoint);
  const Pose pose = pose_from_json(read_json_file(pose_file));
  const Camera cam = camera_from_json(read_json_file(camera_file));
  const RenderOutput r = render_model(cfg, *m, pose, cam, opt);
  write_ppm(out.string() + ".ppm", to_image(r));
  write_raw_planes(out.string() + ".corr.f32", r.corr, r.height, r.width, 3);
  write_json_file(out.string() + ".stats.json", to_json(r.stats));
  return r;
}

// correspond

/// Maximum canonical distance between a warped point and what the oracle sees
/// at its projection for the point to count as visible in B.
inline constexpr double kVisibilityEps = 0.05;

struct CorrespondReport {
  std::vector<PixelCoord> source;
  std::vector<CorrPair> pairs;
  std::vector<CorrPair> baseline_pairs;
  double p2p = 0.0;
  double baseline_p2p = 0.0;
  double failure_fraction = 0.0;
};

inline nlohmann::json to_json(const CorrespondReport& r) {
  nlohmann::json pairs = nlohmann::json::array();
  for (std::size_t i = 0; i < r.pairs.size(); ++i) {
    const auto& p = r.pairs[i];
    pairs.push_back({{"source", {p.source.x(), p.source.y()}},
                     {"matched", {p.matched.x(), p.matched.y()}},
                     {"truth", {p.truth.x(), p.truth.y()}},
                     {"distance", (p.matched - p.truth).norm()},
                     {"baseline_matched", {r.baseline_pairs[i].matched.x(), r.baseline_pairs[i].matched.y()}}});
  }
  return {{"pairs", pairs},
          {"mean_p2p", r.p2p},
          {"baseline_mean_p2p", r.baseline_p2p},
          {"count", r.pairs.size()},
          {"failure_fraction", r.failure_fraction}};
}

inline Vec3 pixel_vec(const std::vector<double>& buf, std::size_t p) {
  return Vec3(buf[3 * p], buf[3 * p + 1], buf[3 * p + 2]);
}

/// Correspondences from frame A to frame B seen by the same camera. Ground
/// truth warps each foreground point of A by its dominant bone into B and
/// keeps it when the oracle sees that point there; the true pixel is the one
/// containing the projection. Predictions match the
/// model's canonical buffers; the baseline matches accumulated view-space
/// positions of the same renders.
inline CorrespondReport correspond(const RunConfig& cfg, const Model& m, const CapsuleActor& actor, const Pose& pose_a,
                                   const Pose& pose_b, const Camera& cam) {
  RenderConfig rc = cfg.render;
  const RenderOutput oa = oracle_render(cam, actor, pose_a, rc);
  const RenderOutput ob = oracle_render(cam, actor, pose_b, rc);
  const RenderOutput ma = render_model(cfg, m, pose_a, cam, {});
  const RenderOutput mb = render_model(cfg, m, pose_b, cam, {});

  CorrespondReport rep;
  std::vector<Eigen::Vector2d> truth;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const std::size_t p = oa.pixel(x, y);
      if (oa.acc[p] <= kForegroundThreshold || ma.acc[p] <= kForegroundThreshold) continue;
      const Vec3 x_c = pixel_vec(oa.corr, p) / oa.acc[p];
      const Vec3 x_b = pose_b.transforms[dominant_bone(actor, x_c)].apply(x_c);
      const auto proj = cam.project(x_b);
      if (!proj) continue;
      const int tx = static_cast<int>(std::floor(proj->first));
      const int ty = static_cast<int>(std::floor(proj->second));
      if (tx < 0 || ty < 0 || tx >= cam.width || ty >= cam.height) continue;
      const std::size_t q = ob.pixel(tx, ty);
      if (ob.acc[q] <= kForegroundThreshold) continue;
      if ((pixel_vec(ob.corr, q) / ob.acc[q] - x_c).norm() > kVisibilityEps) continue;
      rep.source.push_back({x, y});
      truth.emplace_back(tx + 0.5, ty + 0.5);
    }
  if (rep.source.empty()) throw EmptyForeground("no mutually visible foreground points between the two frames");

  const auto matched = match_correspondences(ma, mb, rep.source);
  const auto base = match_correspondences(ma, mb, rep.source, kForegroundThreshold, &mb.position, &ma.position);
  for (std::size_t i = 0; i < rep.source.size(); ++i) {
    const Eigen::Vector2d src(rep.source[i].x + 0.5, rep.source[i].y + 0.5);
    rep.pairs.push_back({src, Eigen::Vector2d(matched[i].x + 0.5, matched[i].y + 0.5), truth[i]});
    rep.baseline_pairs.push_back({src, Eigen::Vector2d(base[i].x + 0.5, base[i].y + 0.5), truth[i]});
  }
  rep.p2p = p2p_error(rep.pairs);
  rep.baseline_p2p = p2p_error(rep.baseline_pairs);
  const auto fa = ma.stats, fb = mb.stats;
  const double queried = static_cast<double>(fa.queried_samples + fb.queried_samples);
  rep.failure_fraction = queried > 0 ? static_cast<double>(fa.failed_samples + fb.failed_samples) / queried : 0.0;
  return rep;
}

inline CorrespondReport cmd_correspond(const RunConfig& cfg, const fs::path& checkpoint, const std::string& frame_a,
                                       const std::string& frame_b, const std::string& camera_id, int resolution,
                                       const fs::path& out) {
  const auto m = load_model(checkpoint);
  const Dataset d = read_dataset(cfg.dataset);
  Camera cam = d.cameras[d.camera_index(camera_id)];
  if (resolution > 0) cam = cam.scaled(resolution, resolution);
  const auto rep = correspond(cfg, *m, d.actor, d.poses[d.frame_index(frame_a)], d.poses[d.frame_index(frame_b)], cam);
  if (!out.empty()) write_json_file(out, to_json(rep));
  return rep;
}

// eval

/// One row per frame (PSNR averaged over its cameras) and a mean row per split.
inline nlohmann::json cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const std::vector<std::string>& names,
                               const EvalOptions& opt = {}) {
  const auto m = load_model(checkpoint);
  const Dataset d = read_dataset(cfg.dataset);
  const SplitResult s = read_splits(cfg);
  nlohmann::json table = nlohmann::json::array();
  std::map<std::string, double> means;
  for (const auto& name : names) {
    const auto& frames = s.named(name);
    if (frames.empty()) throw ConfigError("split '" + name + "' is empty");
    const auto rows = evaluate_frames(cfg, *m, d, frames, opt);
    for (const auto& f : frames) {
      double sum = 0.0, fail = 0.0;
      std::size_t n = 0;
      for (const auto& r : rows)
        if (r.frame == f) {
          sum += r.psnr;
          fail += r.failure_fraction;
          ++n;
        }
      table.push_back({{"split", name}, {"frame", f}, {"psnr", sum / n}, {"failure_fraction", fail / n}});
    }
    means[name] = mean_psnr(rows);
    table.push_back({{"split", name}, {"frame", "mean"}, {"psnr", means[name]}});
  }
  nlohmann::json out = {{"rows", table}};
  if (means.count("val_ind") && means.count("val_ood")) out["ind_ood_gap"] = means["val_ind"] - means["val_ood"];
  return out;
}

}  // namespace volact
