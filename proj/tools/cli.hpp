// Subcommands of the xcoreg command-line tool.
#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace xcoreg::cli {

enum ExitCode : int { kSuccess = 0, kFailure = 1, kUsage = 2, kNumerical = 3, kIo = 4 };

/// Writes images, ground-truth transforms, label maps, the foreground mask
/// and manifest.json into `out_dir` (created when missing).
void cmd_synth(const std::filesystem::path& spec, const std::filesystem::path& out_dir);

/// Runs the configured pipeline on a case and writes transform_<j>.json,
/// trace.csv, warped_<j>.pvol, run.json and, for X-metric runs, gamma.pvol.
void cmd_register(const std::filesystem::path& manifest, const std::filesystem::path& config,
                  const std::filesystem::path& out_dir, std::ostream& log);

/// Scores the estimates in `estimated_dir` (plus the "initial" identity
/// baseline) and merges the rows into `report`.
void cmd_evaluate(const std::filesystem::path& manifest, const std::filesystem::path& estimated_dir,
                  const std::filesystem::path& report);

/// Parses arguments, dispatches, and maps errors to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace xcoreg::cli
