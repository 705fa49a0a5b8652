#pragma once

#include <vector>

#include "volact/volact.hpp"

namespace volact::testing {

/// Two-bone chain, a posed frame, tiny randomized networks and an 8x8 camera.
/// Every parameter is random, including the deformation and AO heads.
struct MicroScene {
  Skeleton skeleton;
  FieldConfig fcfg;
  ParamStore params;
  ActorFields fields;
  std::vector<PoseContext> contexts;
  Camera camera;
  RenderConfig rcfg;
  RootFindConfig rf;
  Batch batch;

  explicit MicroScene(std::uint64_t seed = 7, bool ao = true, bool delta = true) {
    Bone b0;
    b0.head = Vec3(0.0, -0.3, 0.0);
    b0.tail = Vec3(0.0, 0.0, 0.0);
    b0.axis = Vec3::UnitZ();
    Bone b1;
    b1.head = Vec3(0.0, 0.0, 0.0);
    b1.tail = Vec3(0.0, 0.3, 0.0);
    b1.parent = 0;
    b1.axis = Vec3::UnitZ();
    skeleton.bones = {b0, b1};

    fcfg.skinning_layers = 2;
    fcfg.skinning_width = 32;
    fcfg.delta_layers = 2;
    fcfg.delta_width = 32;
    fcfg.radiance_layers = 2;
    fcfg.radiance_width = 32;
    fcfg.ao_layers = 1;
    fcfg.ao_width = 32;
    fcfg.pe_degree_coords = 2;
    fcfg.ipe_degree = 4;
    fields = ActorFields(fcfg, 2, params);
    fields.init(params, seed);
    Rng rng(seed + 1);
    perturb(fields.delta_net().output_layer(), 0.05, rng);
    perturb(fields.ao_net().output_layer(), 0.5, rng);
    perturb(fields.radiance_net().output_layer(), 0.5, rng);

    const double angles[2] = {0.2, 0.5};
    contexts.emplace_back(skeleton, forward_kinematics(skeleton, angles));
    camera = Camera::look_at(Vec3(0.3, 0.2, 2.0), Vec3::Zero(), Vec3::UnitY(), 12.0, 8, 8);

    rcfg.near = 1.4;
    rcfg.far = 2.6;
    rcfg.n_samples = 8;
    rcfg.stratified = false;
    rcfg.failure_strategy = FailureStrategy::ZeroFill;
    rcfg.ao_enabled = ao;
    rcfg.delta_enabled = delta;
    rcfg.skeleton_margin = 0.0;
    rf.tol = 1e-11;
    rf.max_iters = 30;

    for (int y = 0; y < camera.height; ++y)
      for (int x = 0; x < camera.width; ++x)
        batch.rays.push_back({generate_cone(camera, x, y), Vec3(rng.uniform(), rng.uniform(), rng.uniform()), 0});
    batch.bone_samples = sample_bone_points(skeleton, 4, rng);
    batch.delta_context = 0;
  }

  void perturb(const DenseLayer& layer, double scale, Rng& rng) {
    auto v = params.values();
    for (std::size_t k = 0; k < layer.in * layer.out; ++k) v[layer.weight + k] = scale * rng.uniform(-1.0, 1.0);
    for (std::size_t k = 0; k < layer.out; ++k) v[layer.bias + k] = scale * rng.uniform(-1.0, 1.0);
  }

  double loss(const ParamStore& p) const {
    return loss_and_grad(fields, p, contexts, batch, rcfg, rf, LossWeights{}, {}).total;
  }

  LossReport loss_with_grad() {
    params.zero_grads();
    return loss_and_grad(fields, params, contexts, batch, rcfg, rf, LossWeights{}, params.grads());
  }

  /// `per_net` random parameter indices from each of the four networks.
  std::vector<std::size_t> probe_indices(std::size_t per_net, std::uint64_t seed) const {
    Rng rng(seed);
    std::vector<std::size_t> out;
    for (const char* prefix : {"skinning.", "delta.", "radiance.", "ao."}) {
      std::vector<std::size_t> pool;
      for (const auto& e : params.layout())
        if (e.name.rfind(prefix, 0) == 0)
          for (std::size_t k = 0; k < e.size(); ++k) pool.push_back(e.offset + k);
      rng.shuffle(pool);
      for (std::size_t i = 0; i < per_net && i < pool.size(); ++i) out.push_back(pool[i]);
    }
    return out;
  }
};

/// Gradient error relative to the probe's own magnitude, floored at a small
/// fraction of the largest probed gradient.
inline double strict_relative_error(const GradCheckReport& r) {
  double scale = 0.0;
  for (double g : r.numeric) scale = std::max(scale, std::abs(g));
  double worst = 0.0;
  for (std::size_t i = 0; i < r.numeric.size(); ++i)
    worst = std::max(worst, std::abs(r.analytic[i] - r.numeric[i]) / std::max(std::abs(r.numeric[i]), 1e-2 * scale));
  return worst;
}

}  // namespace volact::testing
