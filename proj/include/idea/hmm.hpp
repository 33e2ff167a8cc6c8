#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "idea/rng.hpp"

namespace idea::hmm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Switching linear-Gaussian autoregression. The first observation of a
// sequence is modeled as N(b_e, diag exp(logvar_e)); later steps as
// N(W_e x_{t-1} + b_e, diag exp(logvar_e)).
struct ArState {
  MatrixXd W;      // n x n
  VectorXd b;      // n
  VectorXd logvar; // n, floored at log(1e-6)
};

struct Arhmm {
  int E = 0;
  MatrixXd A;   // E x E row-stochastic
  VectorXd pi;  // E
  std::vector<ArState> states;

  int dim() const;
  void validate() const;
};

constexpr double kVarianceFloor = 1e-6;

// Per-step per-state emission log densities, T x E.
MatrixXd emission_logp(const Arhmm& model, const MatrixXd& x);

// Log-space forward pass.
double loglik(const Arhmm& model, const MatrixXd& x);

struct Posteriors {
  MatrixXd gamma;              // T x E, rows sum to 1
  std::vector<MatrixXd> xi;    // T-1 entries, E x E each
  double loglik = 0.0;
};

Posteriors posterior_smooth(const Arhmm& model, const MatrixXd& x);

// Most likely path; ties resolve toward the lower state index, both at the
// backpointers and at the final argmax.
std::vector<int> viterbi(const Arhmm& model, const MatrixXd& x);

struct EmOptions {
  int restarts = 5;
  int max_iters = 200;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

struct EmResult {
  Arhmm model;
  double loglik = 0.0;
  std::vector<std::vector<double>> traces;  // per restart, per iteration
  int best_restart = 0;
  bool variance_floor_hit = false;
};

// Baum-Welch over independent windows sharing parameters. Restart 0 seeds
// from k-means on one-step differences, the rest from randomly perturbed
// global AR fits; the best final log likelihood wins (ties: lowest index).
EmResult em_fit(const std::vector<MatrixXd>& windows, int E, const EmOptions& opts);

enum class EnvPrediction { argmax, sample };

// Decodes the history, then rolls the chain forward `horizon` steps.
std::vector<int> predict_env(const Arhmm& model, const MatrixXd& x_hist, int horizon,
                             EnvPrediction mode, std::uint64_t seed = 0);

void save_arhmm(const std::string& path, const Arhmm& model);
Arhmm load_arhmm(const std::string& path);

}  // namespace idea::hmm
