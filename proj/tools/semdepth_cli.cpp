// Command-line entry point: data generation, training, evaluation and the
// verification suites. Exit code 0 only if the invoked step succeeds.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "semdepth/checks.hpp"
#include "semdepth/io.hpp"
#include "semdepth/metrics.hpp"
#include "semdepth/network.hpp"
#include "semdepth/synth.hpp"
#include "semdepth/trainer.hpp"

namespace {

using namespace semdepth;

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir) {
  Config cfg = Config::from_file(spec_path);
  int count = 0;
  SceneSpec spec = parse_scene_spec(cfg, count);
  std::vector<SceneSample> samples;
  samples.reserve(count);
  for (int i = 0; i < count; ++i) {
    SceneSpec s = spec;
    s.seed = spec.seed + static_cast<unsigned>(i) * 101u;
    samples.push_back(make_scene_sample(s));
  }
  write_dataset(out_dir, samples);
  std::printf("wrote %d samples to %s\n", count, out_dir.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  Config cfg = Config::from_file(config_path);
  TrainConfig tc = parse_train_config(cfg);
  auto dataset = load_dataset(data_dir);
  if (!dataset.empty()) {
    tc.backbone.height = dataset[0].height;
    tc.backbone.width = dataset[0].width;
  }
  TrainResult result = train(tc, dataset, out_dir);
  const auto& last = result.epochs.back();
  std::printf("done: abs_rel=%.4f miou=%.4f checkpoint=%s\n",
              last.depth.abs_rel, last.miou, result.checkpoint_path.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir) {
  Network<float> net(checkpoint_backbone(checkpoint), 1);
  load_checkpoint(net, checkpoint);
  auto dataset = load_dataset(data_dir);
  const auto m = evaluate_network_depth(net, dataset,
                                        static_cast<int>(dataset.size()), 100.0);
  const double miou =
      evaluate_network_seg(net, dataset, static_cast<int>(dataset.size()));
  std::printf("abs_rel=%.4f sq_rel=%.4f rms=%.4f rms_log=%.4f "
              "d1=%.4f d2=%.4f d3=%.4f miou=%.4f\n",
              m.abs_rel, m.sq_rel, m.rms, m.rms_log, m.delta1, m.delta2,
              m.delta3, miou);
  return 0;
}

int cmd_dump_depth(const std::string& checkpoint, const std::string& image,
                   const std::string& out_path) {
  Network<float> net(checkpoint_backbone(checkpoint), 1);
  load_checkpoint(net, checkpoint);
  int H = 0, W = 0;
  auto rgb = read_ppm(image, H, W);
  auto disp = predict_disparity(net, rgb, H, W);
  if (out_path.size() > 4 &&
      out_path.substr(out_path.size() - 4) == ".ppm") {
    float mx = 1e-12f;
    for (float d : disp) mx = std::max(mx, d);
    std::vector<float> vis(3 * disp.size());
    for (std::size_t i = 0; i < disp.size(); ++i)
      vis[i] = vis[disp.size() + i] = vis[2 * disp.size() + i] = disp[i] / mx;
    write_ppm(out_path, vis, H, W);
  } else {
    write_pfm(out_path, disp, H, W);
  }
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

int cmd_grad_check(const std::string& module) {
  auto results = checks::run_gradient_checks(module);
  checks::print_results(results);
  return checks::all_passed(results) ? 0 : 1;
}

int cmd_oracle_check() {
  auto results = checks::run_oracle_checks();
  checks::print_results(results);
  return checks::all_passed(results) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised monocular depth + segmentation toolkit"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, config_path, data_dir, checkpoint, image;
  std::string module = "all";

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "scene spec file")->required();
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", config_path, "training config file")->required();
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", out_dir, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();

  auto* gc = app.add_subcommand("grad-check", "finite-difference audit");
  gc->add_option("--module", module,
                 "all|ops|geometry|losses|sgt|cma|network");

  app.add_subcommand("oracle-check", "brute-force oracle audit");

  auto* dd = app.add_subcommand("dump-depth", "predict a disparity map");
  dd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  dd->add_option("--image", image, "input PPM image")->required();
  dd->add_option("--out", out_dir, "output file (.pfm or .ppm)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(spec_path, out_dir);
    if (tr->parsed()) return cmd_train(config_path, data_dir, out_dir);
    if (ev->parsed()) return cmd_eval(checkpoint, data_dir);
    if (gc->parsed()) return cmd_grad_check(module);
    if (dd->parsed()) return cmd_dump_depth(checkpoint, image, out_dir);
    return cmd_oracle_check();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
