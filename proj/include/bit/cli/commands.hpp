#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace bit::cli {

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitUsage = 2 };

struct Options {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> out;
  int stage = 1;
  std::optional<std::uint64_t> seed;
  std::optional<int> top_K;
  bool baseline = false;
  std::vector<double> fractions{0.0, 0.1, 0.2};
  std::string modality = "ir";
  /// Test hook for gradcheck: scale the backward rule of this op.
  std::string corrupt_op;
};

/// Each command writes its report to `opts.out` when given, otherwise to `out`;
/// diagnostics go to `err`. The return value is the process exit code.
int cmd_gen_data(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_train(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_imbalance(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_debug_matches(const Options& opts, std::ostream& out, std::ostream& err);

/// Path of the per-epoch JSON-lines log that accompanies a trained checkpoint.
std::filesystem::path metrics_log_path(const std::filesystem::path& checkpoint);

}  // namespace bit::cli
