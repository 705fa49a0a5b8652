// Trains a small actor on a handful of synthetic views and renders it next
// to the ground truth. Usage: volact_demo [out_dir] [steps]

#include <iostream>

#include "volact/volact.hpp"

using namespace volact;

int main(int argc, char** argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : "demo_out";
  const std::size_t steps = argc > 2 ? std::stoul(argv[2]) : 300;

  const CapsuleActor actor = default_actor();
  const auto cams = ring_cameras(4, 2.2, 0.26, 50.0, 32, 32);
  RenderConfig rc;
  rc.near = 1.5;
  rc.far = 2.9;
  rc.n_samples = 32;
  rc.ao_enabled = false;
  rc.delta_enabled = false;
  rc.skeleton_margin = 0.16;

  Rng rng(1);
  TrainingSet data;
  std::vector<std::pair<double, double>> ranges = {{-0.3, 0.3}, {-0.8, 0.8}, {-0.8, 0.8}};
  for (int f = 0; f < 3; ++f) {
    data.contexts.emplace_back(actor.skeleton, sample_pose(actor.skeleton, ranges, rng));
    for (const auto& cam : cams)
      data.views.push_back({cam, data.contexts.size() - 1, to_image(oracle_render(cam, actor, data.contexts.back().pose, rc))});
  }

  FieldConfig fc;
  fc.skinning_layers = 2;
  fc.skinning_width = 32;
  fc.delta_layers = 1;
  fc.delta_width = 16;
  fc.radiance_layers = 3;
  fc.radiance_width = 48;
  fc.ao_layers = 1;
  fc.ao_width = 16;
  fc.ipe_degree = 6;
  ParamStore params;
  const ActorFields fields(fc, actor.skeleton.size(), params);
  fields.init(params, 0);

  TrainConfig tc;
  tc.rays_per_batch = 128;
  tc.steps = steps;
  tc.lr_init = 3e-3;
  tc.lr_final = 3e-4;
  Trainer trainer(fields, params, actor.skeleton, tc, rc, RootFindConfig{});
  for (std::size_t s = 0; s < steps; ++s) {
    const auto r = trainer.step(data);
    if (s % 50 == 0 || s + 1 == steps) std::cout << to_json(r).dump() << "\n";
  }

  const auto& view = data.views.front();
  const auto img = render_image(view.camera, data.contexts[view.context], make_actor(fields, params, rc), rc,
                                RootFindConfig{});
  write_ppm(out / "render.ppm", to_image(img));
  write_ppm(out / "reference.ppm", view.image);
  std::cout << "psnr " << psnr(img.color, view.image.rgb) << " dB, images in " << out << "\n";
  return 0;
}
