#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "volact/errors.hpp"
#include "volact/fields.hpp"
#include "volact/image_io.hpp"
#include "volact/renderer.hpp"
#include "volact/rootfind.hpp"
#include "volact/splits.hpp"
#include "volact/synth.hpp"
#include "volact/training.hpp"

namespace volact {

/// Dataset generation settings. Angles are in degrees.
struct SynthConfig {
  std::size_t poses = 20;
  std::size_t cameras = 8;
  int width = 64;
  int height = 64;
  double camera_radius = 2.2;
  double camera_elevation_deg = 15.0;
  double focal = 100.0;  // at `width`
  double root_range_deg = 20.0;
  double joint_range_deg = 60.0;
  std::uint64_t seed = 0;

  std::vector<std::pair<double, double>> angle_ranges(std::size_t bones) const {
    std::vector<std::pair<double, double>> r;
    for (std::size_t j = 0; j < bones; ++j) {
      const double a = (j == 0 ? root_range_deg : joint_range_deg) * M_PI / 180.0;
      r.emplace_back(-a, a);
    }
    return r;
  }

  std::vector<Camera> make_cameras() const {
    return ring_cameras(cameras, camera_radius, camera_elevation_deg * M_PI / 180.0, focal, width, height);
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthConfig, poses, cameras, width, height, camera_radius,
                                                camera_elevation_deg, focal, root_range_deg, joint_range_deg, seed)

/// Everything a command needs. Defaults are sized for a desktop CPU.
struct RunConfig {
  std::string dataset = "data/toy";
  std::string output = "runs/toy";
  FieldConfig fields;
  RootFindConfig rootfind;
  TrainConfig train;
  RenderConfig render;
  SynthConfig synth;
  SplitConfig split;
  std::uint64_t seed = 0;

  RunConfig() {
    fields.skinning_layers = 3;
    fields.skinning_width = 32;
    fields.delta_layers = 2;
    fields.delta_width = 32;
    fields.radiance_layers = 4;
    fields.radiance_width = 64;
    fields.ao_layers = 1;
    fields.ao_width = 32;
    fields.pe_degree_coords = 4;
    fields.ipe_degree = 8;
    train.rays_per_batch = 128;
    train.steps = 8000;
    train.lr_init = 2e-3;
    train.lr_final = 1e-4;
    render.near = 1.5;
    render.far = 2.9;
    render.n_samples = 64;
    render.skeleton_margin = 0.16;
    split.K = 4;
  }

  void validate() const {
    fields.validate();
    rootfind.validate();
    train.validate();
    render.validate();
    if (split.K == 0) throw ConfigError("split.K must be positive");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, dataset, output, fields, rootfind, train, render, synth,
                                                split, seed)

/// Parses an override value: JSON when it parses, otherwise a plain string.
inline nlohmann::json parse_override_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return text;
  }
}

/// Applies `key=value` with a dotted key path; unknown keys are rejected.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  std::string pointer;
  std::size_t start = 0;
  while (start <= key.size()) {
    const auto dot = key.find('.', start);
    pointer += "/" + key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  const nlohmann::json::json_pointer ptr(pointer);
  if (!j.contains(ptr)) throw ConfigError("unknown config key '" + key + "'");
  j[ptr] = parse_override_value(assignment.substr(eq + 1));
}

inline RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  nlohmann::json j = RunConfig{};
  if (!path.empty()) {
    const auto file = read_json_file(path);
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
    j.merge_patch(file);
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig cfg;
  try {
    cfg = j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace volact
