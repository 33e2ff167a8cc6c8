#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace idea::eval {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Correlation { pearson, spearman };

struct MccResult {
  double score = 0.0;
  // assignment[i] is the estimated column matched to true column i.
  std::vector<int> assignment;
  // Absolute correlations, true dimensions x estimated dimensions.
  MatrixXd corr;
};

// Mean correlation coefficient between latent trajectories: the matching of
// estimated to true dimensions that maximizes the mean absolute correlation
// (exhaustive for d <= 8, Hungarian otherwise). Constant columns correlate
// with everything at 0.
MccResult mcc(const MatrixXd& z_true, const MatrixXd& z_est,
              Correlation kind = Correlation::pearson);

// Diagnostic variant: regress z_true on z_est (with intercept) and average
// the per-dimension absolute correlations against the fitted values. A high
// value paired with a low matched score means the latents were recovered
// only up to an invertible linear mix, not dimension by dimension.
double aligned_mcc(const MatrixXd& z_true, const MatrixXd& z_est,
                   Correlation kind = Correlation::pearson);

struct EnvAccuracy {
  double accuracy = 0.0;
  // Relabeling of estimated states: best_perm[est] is the true label.
  std::vector<int> best_perm;
};

// Max over all E! relabelings of the estimated labels of the agreement rate
// with the true labels. E is capped at 8 by the exhaustive search.
EnvAccuracy env_accuracy(const std::vector<int>& e_true, const std::vector<int>& e_est, int E);

// Mean over all E^2 entries of (A_true(i, j) - A_est(perm(i), perm(j)))^2.
// perm maps true state indices to estimated ones, which is the inverse of
// EnvAccuracy::best_perm.
double transition_mse(const MatrixXd& A_true, const MatrixXd& A_est, const std::vector<int>& perm);

std::vector<int> invert_perm(const std::vector<int>& perm);

struct ForecastErrors {
  double mse = 0.0;
  double mae = 0.0;
};

ForecastErrors forecast_errors(const MatrixXd& y_true, const MatrixXd& y_pred);

// Everything the run directory's artifacts support; a family whose inputs
// are missing stays unset rather than failing the whole report.
struct MetricsReport {
  std::optional<MccResult> mcc_s, mcc_e, mcc_all;
  std::optional<double> aligned_mcc_s, aligned_mcc_e;
  std::optional<double> env_acc;
  std::vector<int> best_perm;  // empty when environment truth is unavailable
  std::optional<double> a_mse;
  std::optional<double> forecast_mse, forecast_mae;
};

// Reads the run's config echo to locate the data directory, assembles every
// computable metric, and writes metrics.json into the run directory. The
// output is a deterministic function of the files read.
MetricsReport report(const std::string& run_dir);

std::string format_metrics(const MetricsReport& m);

}  // namespace idea::eval
