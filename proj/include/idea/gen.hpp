#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "idea/config.hpp"
#include "idea/rng.hpp"
#include "idea/substrate.hpp"

namespace idea::gen {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct MarkovSpec {
  int E = 0;
  MatrixXd A;   // E x E, rows sum to 1 within 1e-12
  VectorXd pi;  // E, sums to 1 within 1e-12
  void validate() const;
};

// Per-environment diagonal Gaussians for the environment-driven latents.
struct EnvGauss {
  MatrixXd mean;   // E x n_e
  MatrixXd sigma;  // E x n_e, strictly positive
};

struct TrueSystem {
  MarkovSpec markov;
  int n_s = 0, n_e = 0, lag = 1;
  EnvGauss env;
  substrate::Mlp f_s;     // (n_s * lag) -> n_s transition mean
  VectorXd sigma_s;       // per-dimension innovation scales, all positive
  substrate::Mlp mixing;  // (n_s + n_e) -> same, invertible observation map

  int n() const { return n_s + n_e; }
};

struct Dataset {
  MatrixXd x;               // T x n observations
  std::vector<int> e_true;  // empty when unavailable
  MatrixXd z_s, z_e;        // 0 x 0 when unavailable
  int t_split = 0, window = 0, stride = 0;

  long T() const { return x.rows(); }
};

struct AssumptionReport {
  bool full_rank_ok = false;
  bool dwell_ok = false;
  bool separation_ok = false;
  bool v_independence_ok = false;
  bool w_independence_ok = false;
  bool warn_reducible = false;  // some transition has zero probability

  double a_min_singular = 0.0;
  int min_dwell = 0;
  double mean_separation = 0.0;
  double separation_required = 0.0;
  double v_min_singular = 0.0;
  double w_min_singular = 0.0;

  bool all_ok() const {
    return full_rank_ok && dwell_ok && separation_ok && v_independence_ok && w_independence_ok;
  }
  std::string failures() const;
};

// 0.7 I + 0.3 Dirichlet(1, ..., 1) rows; diagonal never below 0.7.
MarkovSpec make_markov_spec(int E, Rng& rng);

TrueSystem make_true_system(const GenConfig& cfg, Rng& rng);

// Markov path with every maximal run at least 2 long: a state that has just
// been entered transitions to itself once before the chain draws freely, and
// the final step may not open a new run. Requires T >= 2.
std::vector<int> sample_markov(const MarkovSpec& spec, long T, Rng& rng);

// z^e_t = mean[e_t] + sigma[e_t] * eps, T x n_e.
MatrixXd sample_nonstationary(const TrueSystem& sys, const std::vector<int>& e, Rng& rng);

// First `lag` rows are standard normal; afterwards
// z_{t,i} = f_s(z_{t-lag}, ..., z_{t-1})_i + sigma_s[i] * eps_i
// (oldest history first).
MatrixXd sample_stationary(const TrueSystem& sys, long T, Rng& rng);

// Rowwise observation map x_t = mixing([z_s_t, z_e_t]).
MatrixXd mix(const TrueSystem& sys, const MatrixXd& z);

// Numerical validation of the conditions the estimation stack relies on.
// Derivative-based checks use central differences at random probe points.
AssumptionReport check_assumptions(const TrueSystem& sys, const std::vector<int>& e_true,
                                   Rng& rng);

struct GeneratedData {
  TrueSystem system;
  Dataset train, test;
  AssumptionReport report;
};

// Builds a system from the seed, samples disjoint train/test streams, and
// throws AssumptionError when any validity check fails.
GeneratedData generate(const GenConfig& cfg, std::uint64_t seed);
GeneratedData generate_with_system(TrueSystem sys, const GenConfig& cfg, std::uint64_t seed);

// Dataset directory layout: gen_config.json and transition.csv at the top,
// train/ and test/ each holding observations.csv, latents_s.csv,
// latents_e.csv, envs.csv.
void write_dataset_dir(const std::string& dir, const GeneratedData& data, const GenConfig& cfg,
                       std::uint64_t seed);

// Reads one split; latent/env files are optional and left empty if absent.
Dataset read_split(const std::string& split_dir, int t_split, int window, int stride);

}  // namespace idea::gen
