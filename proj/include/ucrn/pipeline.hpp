#pragma once

namespace ucrn {

// Parses arguments, runs one subcommand (or the whole pipeline), and returns
// the process exit code: 0 success, 1 command failure, 2 usage/config error.
int run_cli(int argc, char** argv);

}  // namespace ucrn
