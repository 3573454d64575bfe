// Stereo obstacle detection and tracking on voxel grids: dataset
// generation, two-phase training, evaluation, inference and dump export.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "odt/config.hpp"
#include "odt/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value config file");
  cmd->add_option("overrides", args.overrides, "config overrides as key=value");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"odt: stereo obstacle detection and tracking on voxel grids"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  CommonArgs gen_args, td_args, tj_args, ev_args, in_args, xv_args;

  auto* gen = app.add_subcommand("gen-data", "render a synthetic stereo dataset with ground truth");
  add_common(gen, gen_args);

  auto* td = app.add_subcommand("train-detect", "train the occupancy detection stack");
  std::string td_out = "detect.ckpt", td_resume;
  int td_stop = 0;
  add_common(td, td_args);
  td->add_option("--out", td_out, "checkpoint path to write");
  td->add_option("--resume", td_resume, "checkpoint to resume from");
  td->add_option("--stop-after", td_stop, "stop after this many epochs (keeps the full schedule)");

  auto* tj = app.add_subcommand("train-joint", "jointly train detection and tracking");
  std::string tj_init, tj_out = "joint.ckpt";
  bool tj_cold = false;
  add_common(tj, tj_args);
  tj->add_option("--init", tj_init, "detection checkpoint to start from");
  tj->add_option("--out", tj_out, "checkpoint path to write");
  tj->add_flag("--allow-cold-start", tj_cold, "permit joint training from random weights");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint and write metric reports");
  std::string ev_ckpt, ev_split = "train", ev_out = "eval_out";
  bool ev_force = false;
  add_common(ev, ev_args);
  ev->add_option("--ckpt", ev_ckpt, "checkpoint to evaluate")->required();
  ev->add_option("--split", ev_split, "train | val | all");
  ev->add_option("--out", ev_out, "directory for metrics.csv / metrics.txt");
  ev->add_flag("--allow-config-mismatch", ev_force, "load despite a foreign config fingerprint");

  auto* inf = app.add_subcommand("infer", "run detection (and tracking on pairs), write dumps");
  std::string in_ckpt, in_input, in_out = "infer_out";
  bool in_force = false;
  add_common(inf, in_args);
  inf->add_option("--ckpt", in_ckpt, "checkpoint to run")->required();
  inf->add_option("--input", in_input, "sample directory (left_t.png, right_t.png, calib.txt, optional *_t1)")->required();
  inf->add_option("--out", in_out, "output directory for dumps");
  inf->add_flag("--allow-config-mismatch", in_force, "load despite a foreign config fingerprint");

  auto* xv = app.add_subcommand("export-viz", "convert binary dumps to text point clouds / arrows");
  std::string xv_input, xv_out = "viz_out";
  add_common(xv, xv_args);
  xv->add_option("--input", xv_input, "directory holding .odtv/.odtf dumps")->required();
  xv->add_option("--out", xv_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // usage problems exit 2
  }

  try {
    if (gen->parsed()) {
      odt::run_gen_data(odt::RunConfig::load(gen_args.config_path, gen_args.overrides));
    } else if (td->parsed()) {
      odt::train_detection(odt::RunConfig::load(td_args.config_path, td_args.overrides), td_out,
                           td_resume, td_stop);
    } else if (tj->parsed()) {
      odt::train_joint(odt::RunConfig::load(tj_args.config_path, tj_args.overrides), tj_init,
                       tj_out, tj_cold);
    } else if (ev->parsed()) {
      odt::evaluate(odt::RunConfig::load(ev_args.config_path, ev_args.overrides), ev_ckpt, ev_split,
                    ev_out, ev_force);
    } else if (inf->parsed()) {
      odt::run_infer(odt::RunConfig::load(in_args.config_path, in_args.overrides), in_ckpt,
                     in_input, in_out, in_force);
    } else if (xv->parsed()) {
      odt::run_export_viz(odt::RunConfig::load(xv_args.config_path, xv_args.overrides), xv_input,
                          xv_out);
    }
  } catch (const odt::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
