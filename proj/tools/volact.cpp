// volact: dataset synthesis, splits, training, rendering and evaluation.

#include <CLI11.hpp>

#include <iostream>

#include "volact/volact.hpp"

namespace {

using namespace volact;

struct Common {
  std::string config;
  std::vector<std::string> overrides;

  RunConfig load() const { return load_run_config(config, overrides); }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a config entry, key=value (repeatable)");
}

std::optional<FailureStrategy> parse_strategy(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s == "zero") return FailureStrategy::ZeroFill;
  if (s == "interp") return FailureStrategy::Interpolate;
  throw ConfigError("unknown failure strategy '" + s + "' (expected zero or interp)");
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Articulated volumetric actors: synthesis, training and evaluation"};
  app.require_subcommand(1);

  Common synth_opts;
  auto* synth = app.add_subcommand("synth", "Render a synthetic capsule-actor dataset");
  add_common(synth, synth_opts);

  Common split_opts;
  auto* split = app.add_subcommand("split", "Cluster poses and write splits.json into the dataset");
  add_common(split, split_opts);

  Common train_opts;
  bool resume = false;
  auto* train = app.add_subcommand("train", "Train on the train split");
  add_common(train, train_opts);
  train->add_flag("--resume", resume, "Continue from the checkpoint in the output dir");

  Common render_opts;
  std::string ckpt, pose_file, camera_file, out, strategy;
  bool no_ao = false, no_delta = false;
  int width = 0, height = 0;
  auto* render = app.add_subcommand("render", "Render a pose from a camera");
  add_common(render, render_opts);
  render->add_option("--checkpoint", ckpt, "Checkpoint file (default: <output>/checkpoint.bin)");
  render->add_option("--pose", pose_file, "Pose JSON")->required()->check(CLI::ExistingFile);
  render->add_option("--camera", camera_file, "Camera JSON")->required()->check(CLI::ExistingFile);
  render->add_option("-o,--out", out, "Output prefix")->required();
  render->add_flag("--no-ao", no_ao, "Disable ambient occlusion");
  render->add_flag("--no-delta", no_delta, "Disable the non-linear deformation");
  render->add_option("--strategy", strategy, "Root-finding failure strategy: zero or interp");
  render->add_option("--width", width, "Render width (camera rescaled)");
  render->add_option("--height", height, "Render height (camera rescaled)");

  Common corr_opts;
  std::string frame_a, frame_b, camera_id, corr_ckpt, corr_out;
  int resolution = 0;
  auto* corr = app.add_subcommand("correspond", "Match pixels between two frames and report P2P error");
  add_common(corr, corr_opts);
  corr->add_option("--checkpoint", corr_ckpt, "Checkpoint file (default: <output>/checkpoint.bin)");
  corr->add_option("--frame-a", frame_a, "Source frame id")->required();
  corr->add_option("--frame-b", frame_b, "Target frame id")->required();
  corr->add_option("--camera", camera_id, "Camera id")->required();
  corr->add_option("--resolution", resolution, "Square render resolution (default: camera's)");
  corr->add_option("-o,--out", corr_out, "Write the full report here");

  Common eval_opts;
  std::vector<std::string> split_names;
  std::string eval_ckpt, eval_strategy;
  bool analytic = false;
  auto* eval = app.add_subcommand("eval", "PSNR of rendered splits against the dataset");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file (default: <output>/checkpoint.bin)");
  eval->add_option("--split", split_names, "Split name(s): train, val_ind, val_ood, withheld")->required();
  eval->add_option("--strategy", eval_strategy, "Root-finding failure strategy: zero or interp");
  eval->add_flag("--analytic-skinning", analytic, "Use analytic one-hot skinning with the learned radiance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      const auto d = cmd_synth(synth_opts.load());
      print({{"dataset", d.dir.string()}, {"frames", d.records.size()}});
    } else if (split->parsed()) {
      const auto s = cmd_split(split_opts.load());
      print({{"train", s.train.size()}, {"val_ind", s.val_ind.size()}, {"val_ood", s.val_ood.size()},
             {"ood_cluster", s.ood_cluster}});
    } else if (train->parsed()) {
      TrainOptions opt;
      opt.resume = resume;
      opt.on_step = [](const StepReport& r) { std::cerr << to_json(r).dump() << "\n"; };
      const auto s = cmd_train(train_opts.load(), opt);
      nlohmann::json j = {{"steps", s.steps}, {"final_loss", s.final_loss}};
      if (s.val_ind_psnr) j["val_ind_psnr"] = *s.val_ind_psnr;
      print(j);
    } else if (render->parsed()) {
      const auto cfg = render_opts.load();
      RenderOptions opt;
      opt.ao = !no_ao;
      opt.delta = !no_delta;
      opt.strategy = parse_strategy(strategy);
      if (width > 0) opt.width = width;
      if (height > 0) opt.height = height;
      const auto r = cmd_render(cfg, ckpt.empty() ? checkpoint_path(cfg) : fs::path(ckpt), pose_file, camera_file, out, opt);
      print(to_json(r.stats));
    } else if (corr->parsed()) {
      const auto cfg = corr_opts.load();
      const auto r = cmd_correspond(cfg, corr_ckpt.empty() ? checkpoint_path(cfg) : fs::path(corr_ckpt), frame_a,
                                    frame_b, camera_id, resolution, corr_out);
      print({{"count", r.pairs.size()}, {"mean_p2p", r.p2p}, {"baseline_mean_p2p", r.baseline_p2p}});
    } else if (eval->parsed()) {
      const auto cfg = eval_opts.load();
      EvalOptions opt;
      opt.strategy = parse_strategy(eval_strategy);
      opt.analytic_skinning = analytic;
      print(cmd_eval(cfg, eval_ckpt.empty() ? checkpoint_path(cfg) : fs::path(eval_ckpt), split_names, opt));
    }
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const SingularMatrix& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
