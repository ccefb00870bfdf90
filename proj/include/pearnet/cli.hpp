#pragma once

#include <string>
#include <vector>

namespace pearnet::cli {

// Subcommands: synth | train | ablate | inspect, each taking
// --config <path> [--seed <int>] [--out <dir>] [--force].
// Exit codes: 0 success, 2 config/validation error, 3 runtime/numeric error.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace pearnet::cli
