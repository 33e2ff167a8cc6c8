#pragma once

#include <cstdint>
#include <string>

namespace idea {

// Synthetic data generation. Defaults produce dataset A; set lag = 2 for
// the second-order variant.
struct GenConfig {
  int n_s = 4;
  int n_e = 4;
  int env_count = 3;
  int lag = 1;
  long t_train = 40000;
  long t_test = 9600;
  int window = 24;
  int t_split = 16;
  int stride = 12;
  double sigma_s = 0.3;
  double slope = 0.2;

  int n() const { return n_s + n_e; }
  int horizon() const { return window - t_split; }
};

struct HmmConfig {
  int restarts = 5;
  int max_iters = 200;
  double tol = 1e-6;
};

struct TrainConfig {
  double alpha = 1.0;
  double beta = 0.02;
  double gamma = 0.02;
  double lr = 1e-3;
  int epochs = 50;
  int batch = 64;
  int hidden = 128;
  int prior_hidden = 32;
  int prior_lag = 1;
  std::string env_labels = "viterbi";  // or "random"
};

struct EvalConfig {
  std::string correlation = "pearson";  // or "spearman"
};

struct PathsConfig {
  std::string data_dir;
  std::string run_dir;
};

struct RunConfig {
  std::uint64_t seed = 0;
  GenConfig gen;
  HmmConfig hmm;
  TrainConfig train;
  EvalConfig eval;
  PathsConfig paths;

  // Throws ConfigError on out-of-range values or inconsistent windowing.
  void validate() const;
};

// Parses the key = value / [section] format. Unknown sections or keys are
// rejected so typos fail loudly instead of silently using defaults.
RunConfig parse_run_config_text(const std::string& text, const std::string& origin);
RunConfig load_run_config(const std::string& path);

// Full echo of every key, suitable for re-parsing.
std::string format_run_config(const RunConfig& cfg);

}  // namespace idea
