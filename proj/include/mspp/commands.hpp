#pragma once

// Subcommand workflows behind the command-line tool.

#include "mspp/cli_io.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace mspp {

enum ExitCode : int { exit_ok = 0, exit_failure = 1, exit_config = 2, exit_data = 3, exit_numerical = 4 };

struct CommandLine {
    std::string command;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<std::string> out;
    bool deterministic = false;
};

/// Loads the config and applies flag overrides. Thread count precedence is
/// config, then MSPP_THREADS, then --threads.
RunConfig resolve_config(const CommandLine& cli);

int exit_code_for(const Error& error);

/// One-line JSON error record.
std::string error_record(const std::string& kind, int exit_code, const std::string& message);

int cmd_simulate(const RunConfig& config);
int cmd_fit(const RunConfig& config);
int cmd_predict(const RunConfig& config);
int cmd_bootstrap(const RunConfig& config);
int cmd_cv(const RunConfig& config);
int cmd_compare(const RunConfig& config);

/// Runs one subcommand, writing an error record to `err` on failure.
int run_command(const CommandLine& cli, std::ostream& err);

} // namespace mspp
