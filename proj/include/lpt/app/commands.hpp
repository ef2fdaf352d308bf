#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace lpt::app {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,     // anything not covered below
  kExitConfig = 2,      // ConfigError, DataError
  kExitCheckpoint = 3,  // CheckpointError
  kExitOracle = 4,      // OracleError
  kExitNumeric = 5,     // NumericError
};

struct CommandOptions {
  std::string command;  // pretrain | finetune | sgds | sample | eval
  std::string config_path;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
  /// sample: raw-unit y* per objective; empty samples from the prior.
  std::vector<double> target;
  std::size_t count = 10;
};

/// Runs one command, writing outputs under the configured run directory:
///   config.toml            resolved config, loadable as-is
///   checkpoints/<stage>.ckpt
///   metrics/<stage>.jsonl  one deterministic line per epoch or iteration
///   metrics/<stage>_timing.jsonl
///   reports/...
/// Nothing is written before the config and inputs have been validated.
int run_command(const CommandOptions& opts, std::ostream& out);

/// Maps an exception to its exit code and prints the message to stderr.
int report_error(const std::exception& e);

}  // namespace lpt::app
