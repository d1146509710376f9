#pragma once

namespace ocdn::cli {

enum ExitCode
{
  kOk = 0,
  kConfigError = 1,
  kRuntimeFailure = 2,
};

/// Parses argv and runs one subcommand. Returns the process exit code.
int run_cli(int argc, char** argv);

} // namespace ocdn::cli
