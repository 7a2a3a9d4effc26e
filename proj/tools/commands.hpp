#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

namespace bkind::cli {

/// Raised for problems the user can fix by changing the invocation; mapped to
/// exit code 2 like a flag parse error.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Registers every subcommand on `app`. Each subcommand's callback does the
/// work and throws on failure.
void register_commands(CLI::App& app);

/// `$BKIND_OUTPUT_ROOT/name`, or `bkind_out/name` when the variable is unset.
std::filesystem::path default_output(const std::string& name);

struct PlotOptions {
  std::filesystem::path run_dir;
  std::filesystem::path frames;
  std::filesystem::path masks;
  std::filesystem::path predictions;
  std::filesystem::path checkpoint;
  std::filesystem::path out;
  int overlays = 4;
};

/// Writes losses.png and keypoint overlays; returns the files written.
std::vector<std::filesystem::path> run_plot(const PlotOptions& options);

}  // namespace bkind::cli
