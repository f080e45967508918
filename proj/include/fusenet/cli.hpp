#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fusenet/backbone.hpp"
#include "fusenet/model.hpp"

namespace fusenet {

/// Exit codes of the `fusenet` binary.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

/// Model layout for a `--backbone` choice ("vgg16", "vgg19", "effnet" or
/// "fused") at the given input size. Throws InvalidArgument for other names.
ModelConfig backbone_config(const std::string& name, InputSize input_size);

/// Runs one subcommand (`synth`, `train`, `eval`, `compare`). `args` excludes
/// the program name. Normal output goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fusenet
