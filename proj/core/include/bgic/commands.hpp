// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "bgic/config.hpp"

namespace bgic {

struct CommandOptions {
  std::optional<std::uint64_t> seed;  // overrides the config seed
  std::optional<std::string> out;     // overrides the output directory
  int threads = 1;
};

// One command per process; all paths resolve against the working directory.
// Throws ConfigError / NumericError / FormatError; the CLI maps these to
// exit codes 2 / 3 / 4.

void cmd_generate_data(RunConfig config, const CommandOptions& opts, std::ostream& log);

void cmd_train(RunConfig config, const CommandOptions& opts, const std::string& resume_path,
               bool dry_run, std::ostream& log);

void cmd_sample(RunConfig config, const CommandOptions& opts, const std::string& checkpoint_path,
                std::size_t n, std::ostream& log);

void cmd_evaluate(RunConfig config, const CommandOptions& opts,
                  const std::string& checkpoint_path, std::ostream& log);

void cmd_inspect(RunConfig config, const CommandOptions& opts,
                 const std::string& checkpoint_path, std::ostream& log);

}  // namespace bgic
