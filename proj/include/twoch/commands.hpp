#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "twoch/run_config.hpp"

namespace twoch::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Writes <out>/synth/seq<k>.csv; returns the written paths (none when count = 0).
std::vector<std::filesystem::path> cmd_synth(const RunConfig& config, std::ostream& log);

// Trains on data.root and writes the checkpoint, <out>/loss.csv and
// <out>/train_config.txt. A halted run keeps the last good checkpoint.
train::TrainResult cmd_train(const RunConfig& config, std::ostream& log);

// Forecasts T' frames from the last N frames of `input` into
// <out>/prediction.csv.
std::filesystem::path cmd_predict(const RunConfig& config, std::ostream& log);

// Scores the dataset windows (optionally occluded and recovered) into
// <out>/report.json.
train::EvalReport cmd_eval(const RunConfig& config, std::ostream& log);

// Times single predictions into <out>/bench.json.
train::EvalReport cmd_bench(const RunConfig& config, std::ostream& log);

// Full command line: subcommand dispatch, config resolution and exit codes
// (0 ok, 1 usage or config error, 2 runtime failure).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace twoch::cli
