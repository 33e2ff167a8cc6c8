#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace idea::pipeline {

// Process exit codes shared by every command.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;    // bad flags, bad config, missing or bad input files
constexpr int kExitAssumption = 3;  // generated system failed a validity check
constexpr int kExitNumeric = 4;  // non-finite value inside a computation

// Each command traps the library error types and maps them onto the exit
// codes above; error text goes to stderr, progress to stdout unless quiet.
// Commands never write into their input directories.

// Generates a dataset directory (train/ + test/ + gen_config.json) and
// echoes the effective config as run_config.ini.
int cmd_gen(const std::string& config_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed_override, bool quiet);

// Fits the switching AR model on the training split. Writes arhmm.json,
// envs_hat.csv (Viterbi decode of the full training stream) and
// hmm_trace.csv into the run directory.
int cmd_fit_hmm(const std::string& config_path, const std::string& data_dir,
                const std::string& out_dir, std::optional<std::uint64_t> seed_override,
                bool quiet);

// Trains the latent-variable forecaster against the frozen environment
// model at <out>/arhmm.json (run fit-hmm into the same directory first).
// Writes idea_model.json, trace.csv, and the test-split artifacts
// latents_hat.csv and forecast.csv.
int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, std::optional<std::uint64_t> seed_override,
              bool quiet);

// Scores a run directory against its dataset and writes metrics.json.
int cmd_eval(const std::string& run_dir, bool quiet);

// Forecasts an external series with the models stored in a run directory.
// The input CSV needs a header and the model's feature columns (a leading
// t column is accepted and ignored); rows are consumed in blocks so the
// output matches the training-time forecast.csv layout.
int cmd_forecast(const std::string& run_dir, const std::string& input_csv,
                 const std::string& out_csv, bool quiet);

// Parses argv and dispatches. Returns an exit code; never throws.
int run_cli(int argc, const char* const* argv);

}  // namespace idea::pipeline
