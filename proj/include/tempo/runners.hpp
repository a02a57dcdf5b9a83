#pragma once

#include "tempo/config.hpp"

namespace tempo {

// Command bodies behind the CLI.  Each resolves the config for its task,
// writes the run manifest plus the artifact tree
// <out_dir>/{frames_main, frames_minor, metrics, checkpoints, plots},
// and returns a process exit code (0 on success).  Invalid setups throw the
// shared error taxonomy; the binary maps exceptions via exit_code_for.
int cmd_stabilize(RunConfig rc);
int cmd_propagate(RunConfig rc);
int cmd_evaluate(RunConfig rc);
int cmd_toy(RunConfig rc);

// Dispatches on rc.task.
int run_command(RunConfig rc);

}  // namespace tempo
