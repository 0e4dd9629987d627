#pragma once

#include <string>
#include <vector>

namespace xoftr {

/// Command-line entry point (args exclude the program name). Subcommands:
/// pretrain, finetune, match, eval-pose, eval-homography, augment-preview.
/// Returns 0 on success, 1 on runtime failure (diagnostic on stderr), 2 on
/// usage errors (unknown subcommand/flag, missing required option).
int run_command(const std::vector<std::string>& args);

}  // namespace xoftr
