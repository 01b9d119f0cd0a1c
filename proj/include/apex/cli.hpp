#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "apex/config.hpp"
#include "apex/metrics.hpp"

namespace apex::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2 };

// Entry point of the `apex` executable. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

struct SweepCell {
    std::string label;
    RunConfig cfg;
};

// Cells of a named grid (`ab` or `pe`) derived from `base`.
std::vector<SweepCell> sweep_cells(const std::string& grid, const RunConfig& base);

// Hash of the cell's canonical config text; names its cache directory.
std::string cell_hash(const RunConfig& cfg);

// Trains and evaluates every cell under out/cells/<hash>, reusing cells that
// already have a summary, then writes out/sweep.csv. Returns the CSV text.
std::string run_sweep(const std::string& grid, const RunConfig& base, const std::filesystem::path& out,
                      std::size_t threads);

// Evaluation table of a trained model in CSV form (nfe, cond, w2, mean_err, var_err).
std::string eval_csv(const std::vector<NfeRow>& rows);

}  // namespace apex::cli
