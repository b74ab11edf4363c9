#pragma once

#include <exception>
#include <filesystem>
#include <string>
#include <vector>

namespace cl2dc {

/// Process exit codes of the command-line driver.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,     // bad arguments or configuration
  kExitData = 2,      // unreadable or inconsistent input data
  kExitTraining = 3,  // optimisation failure
};

/// Maps an exception raised by the library onto an exit code.
int exit_code_for(const std::exception& error);

/// Runs the driver with argv-style arguments (args[0] is the program name).
/// Messages go to stderr; artifacts are written under the output directory
/// (--out, else $CL2DC_OUT_DIR, else the working directory).
int run_cli(const std::vector<std::string>& args);

/// Merges every "<method>_curve.csv" in `run_dir` into one CSV with columns
/// method,epsilon,achieved_coverage,accuracy,seed. Methods are ordered by
/// name and rows keep their file order and text. Throws ParseError naming the
/// file and line of the first malformed row, ConfigError when the directory
/// holds no curve.
void emit_plot_data(const std::filesystem::path& run_dir, const std::filesystem::path& out_file);

}  // namespace cl2dc
