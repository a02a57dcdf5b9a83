#include <CLI11.hpp>
#include <cstdio>
#include <string>

#include "tempo/config.hpp"
#include "tempo/errors.hpp"
#include "tempo/runners.hpp"

using namespace tempo;

namespace {

// One shared flag store: subcommands are exclusive, so the active one owns
// the values after parsing.
struct Flags {
  std::string config;
  std::string input_dir, processed_dir, out_dir, flow_manifest, init_checkpoint;
  int epochs = 0;
  bool irt = false;
  double delta = 0.0;
  bool auto_stop = false;
  bool coarse_to_fine = false;
  int window = 0;
  uint64_t seed = 0;
  int jobs = 0;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config,
                  "key/value config file with [section] headers; flags override it");
  cmd->add_option("--input-dir", f.input_dir, "input frame directory (*.png)");
  cmd->add_option("--processed-dir", f.processed_dir,
                  "per-frame processed frames (stabilize), reference targets named like their "
                  "input frames (propagate), or the fidelity reference (evaluate)");
  cmd->add_option("--out-dir", f.out_dir, "artifact root (default: out)");
  cmd->add_option("--epochs", f.epochs, "training epochs (default: 25)");
  cmd->add_flag("--irt,!--no-irt", f.irt,
                "dual-head reweighted training for multimodal processed frames; also selects "
                "the reweighted toy run (default: off)");
  cmd->add_option("--delta", f.delta, "reweighting confidence threshold (default: 0.02)");
  cmd->add_flag("--auto-stop,!--no-auto-stop", f.auto_stop,
                "stop when the recent loss curve flattens (default: off)");
  cmd->add_flag("--coarse-to-fine,!--no-coarse-to-fine", f.coarse_to_fine,
                "run the first half of training at half resolution (default: off)");
  cmd->add_option("--init-checkpoint", f.init_checkpoint,
                  "warm-start checkpoint for training (default: fresh weights)");
  cmd->add_option("--window", f.window,
                  "clip length for splitting long stabilize inputs (default: 300)");
  cmd->add_option("--flow-manifest", f.flow_manifest,
                  "flow-file manifest enabling warp-error metrics (default: none)");
  cmd->add_option("--seed", f.seed, "run seed for nets, sampling, and workers (default: 0)");
  cmd->add_option("--jobs", f.jobs,
                  "worker processes fanned over independent clips (default: 1)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"single-video test-time training: flicker removal, reference propagation, "
               "consistency metrics, and a 2-D training-dynamics lab"};
  app.set_version_flag("--version", std::string("tempo ") + kVersion);
  app.require_subcommand(1);

  Flags f;
  add_common(app.add_subcommand("stabilize",
                                "train on one video to remove flicker from processed frames"),
             f);
  add_common(app.add_subcommand("propagate",
                                "spread reference-frame color/style/segmentation through a video"),
             f);
  add_common(app.add_subcommand("evaluate", "score a frame directory for consistency and fidelity"),
             f);
  add_common(app.add_subcommand("toy", "2-D training-dynamics snapshots (scatter plots + CSV)"),
             f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems are config errors
  }

  try {
    RunConfig rc;
    if (!f.config.empty()) apply_config(rc, parse_config_file(f.config));

    CLI::App* cmd = app.get_subcommands().front();
    rc.task = cmd->get_name();
    if (cmd->count("--input-dir")) rc.input_dir = f.input_dir;
    if (cmd->count("--processed-dir")) rc.processed_dir = f.processed_dir;
    if (cmd->count("--out-dir")) rc.out_dir = f.out_dir;
    if (cmd->count("--flow-manifest")) rc.flow_manifest = f.flow_manifest;
    if (cmd->count("--epochs")) rc.train.epochs = f.epochs;
    if (cmd->count("--irt")) {
      rc.train.irt = f.irt;
      rc.toy_irt = f.irt;
    }
    if (cmd->count("--delta")) {
      rc.train.delta = f.delta;
      rc.toy.delta = f.delta;
    }
    if (cmd->count("--auto-stop")) rc.train.auto_stop = f.auto_stop;
    if (cmd->count("--coarse-to-fine")) rc.train.coarse_to_fine = f.coarse_to_fine;
    if (cmd->count("--init-checkpoint")) rc.train.init_checkpoint = f.init_checkpoint;
    if (cmd->count("--window")) rc.window = f.window;
    if (cmd->count("--seed")) rc.seed = f.seed;
    if (cmd->count("--jobs")) rc.jobs = f.jobs;

    return run_command(std::move(rc));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  }
}
