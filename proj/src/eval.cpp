#include "idea/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

#include "idea/common.hpp"
#include "idea/config.hpp"
#include "idea/csv.hpp"
#include "idea/hmm.hpp"
#include "idea/jsonio.hpp"

namespace idea::eval {

namespace fs = std::filesystem;

namespace {

// Average ranks, ties sharing the mean of their positions.
VectorXd rank_column(const VectorXd& v) {
  const Eigen::Index T = v.size();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(T));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (v(a) != v(b)) return v(a) < v(b);
    return a < b;
  });
  VectorXd r(T);
  Eigen::Index i = 0;
  while (i < T) {
    Eigen::Index j = i;
    while (j + 1 < T && v(idx[static_cast<std::size_t>(j + 1)]) == v(idx[static_cast<std::size_t>(i)]))
      ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) r(idx[static_cast<std::size_t>(k)]) = avg;
    i = j + 1;
  }
  return r;
}

MatrixXd rank_columns(const MatrixXd& m) {
  MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) out.col(c) = rank_column(m.col(c));
  return out;
}

// A column is constant when its centered norm is indistinguishable from the
// rounding noise of the centering itself.
bool near_constant(const VectorXd& centered, const VectorXd& raw) {
  const double scale = 1.0 + raw.cwiseAbs().maxCoeff();
  return centered.norm() <= 1e-12 * scale * std::sqrt(static_cast<double>(raw.size()));
}

MatrixXd abs_corr_matrix(const MatrixXd& a, const MatrixXd& b) {
  const MatrixXd ac = a.rowwise() - a.colwise().mean();
  const MatrixXd bc = b.rowwise() - b.colwise().mean();
  MatrixXd corr(a.cols(), b.cols());
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    const bool const_a = near_constant(ac.col(i), a.col(i));
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      if (const_a || near_constant(bc.col(j), b.col(j))) {
        corr(i, j) = 0.0;
        continue;
      }
      corr(i, j) = std::abs(ac.col(i).dot(bc.col(j)) / (ac.col(i).norm() * bc.col(j).norm()));
    }
  }
  return corr;
}

std::vector<int> exhaustive_assignment(const MatrixXd& score) {
  const int d = static_cast<int>(score.rows());
  std::vector<int> perm(static_cast<std::size_t>(d));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_sum = -std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += score(i, perm[static_cast<std::size_t>(i)]);
    if (s > best_sum) {
      best_sum = s;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Potentials form of the Hungarian method, O(d^3), minimizing `cost`.
std::vector<int> hungarian_assignment(const MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(n) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                           v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    if (p[static_cast<std::size_t>(j)] != 0)
      assign[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return assign;
}

void check_perm(const std::vector<int>& perm, std::size_t size, const char* what) {
  if (perm.size() != size) throw ContractViolation(std::string(what) + " has the wrong length");
  std::vector<char> seen(size, 0);
  for (int v : perm) {
    if (v < 0 || static_cast<std::size_t>(v) >= size || seen[static_cast<std::size_t>(v)])
      throw ContractViolation(std::string(what) + " is not a permutation");
    seen[static_cast<std::size_t>(v)] = 1;
  }
}

}  // namespace

MccResult mcc(const MatrixXd& z_true, const MatrixXd& z_est, Correlation kind) {
  if (z_true.rows() != z_est.rows() || z_true.cols() != z_est.cols())
    throw ContractViolation("mcc inputs must share the same T x d shape");
  if (z_true.rows() < 3) throw ContractViolation("mcc needs at least 3 rows");
  if (z_true.cols() < 1) throw ContractViolation("mcc needs at least 1 column");

  MccResult out;
  if (kind == Correlation::spearman)
    out.corr = abs_corr_matrix(rank_columns(z_true), rank_columns(z_est));
  else
    out.corr = abs_corr_matrix(z_true, z_est);

  const int d = static_cast<int>(out.corr.rows());
  if (d <= 8) {
    out.assignment = exhaustive_assignment(out.corr);
  } else {
    // corr entries sit in [0, 1], so 1 - corr is a valid cost.
    out.assignment = hungarian_assignment(MatrixXd::Ones(d, d) - out.corr);
  }
  double s = 0.0;
  for (int i = 0; i < d; ++i) s += out.corr(i, out.assignment[static_cast<std::size_t>(i)]);
  out.score = s / d;
  return out;
}

double aligned_mcc(const MatrixXd& z_true, const MatrixXd& z_est, Correlation kind) {
  if (z_true.rows() != z_est.rows() || z_true.cols() != z_est.cols())
    throw ContractViolation("aligned_mcc inputs must share the same T x d shape");
  if (z_true.rows() < z_true.cols() + 2)
    throw ContractViolation("aligned_mcc needs more rows than regression unknowns");

  MatrixXd design(z_est.rows(), z_est.cols() + 1);
  design.leftCols(z_est.cols()) = z_est;
  design.rightCols(1).setOnes();
  const MatrixXd fitted = design * design.colPivHouseholderQr().solve(z_true);

  double s = 0.0;
  for (Eigen::Index i = 0; i < z_true.cols(); ++i) {
    const MatrixXd c = kind == Correlation::spearman
                           ? abs_corr_matrix(rank_column(z_true.col(i)), rank_column(fitted.col(i)))
                           : abs_corr_matrix(z_true.col(i), fitted.col(i));
    s += c(0, 0);
  }
  return s / static_cast<double>(z_true.cols());
}

EnvAccuracy env_accuracy(const std::vector<int>& e_true, const std::vector<int>& e_est, int E) {
  if (e_true.size() != e_est.size())
    throw ContractViolation("env_accuracy inputs must have equal length");
  if (e_true.empty()) throw ContractViolation("env_accuracy needs at least one label");
  if (E < 2) throw ContractViolation("env_accuracy needs at least 2 states");
  if (E > 8) throw ContractViolation("env_accuracy supports at most 8 states (E! search)");
  for (std::size_t t = 0; t < e_true.size(); ++t) {
    if (e_true[t] < 0 || e_true[t] >= E || e_est[t] < 0 || e_est[t] >= E)
      throw ContractViolation("environment label out of range");
  }

  // counts(a, b): steps where the estimate says a and the truth says b.
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(E, E);
  for (std::size_t t = 0; t < e_true.size(); ++t) counts(e_est[t], e_true[t]) += 1;

  std::vector<int> perm(static_cast<std::size_t>(E));
  std::iota(perm.begin(), perm.end(), 0);
  EnvAccuracy out;
  out.best_perm = perm;
  long best_hits = -1;
  do {
    long hits = 0;
    for (int a = 0; a < E; ++a) hits += counts(a, perm[static_cast<std::size_t>(a)]);
    if (hits > best_hits) {
      best_hits = hits;
      out.best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  out.accuracy = static_cast<double>(best_hits) / static_cast<double>(e_true.size());
  return out;
}

double transition_mse(const MatrixXd& A_true, const MatrixXd& A_est, const std::vector<int>& perm) {
  const Eigen::Index E = A_true.rows();
  if (A_true.cols() != E || A_est.rows() != E || A_est.cols() != E)
    throw ContractViolation("transition matrices must be square with equal size");
  check_perm(perm, static_cast<std::size_t>(E), "transition_mse perm");

  double s = 0.0;
  for (Eigen::Index i = 0; i < E; ++i)
    for (Eigen::Index j = 0; j < E; ++j) {
      const double d = A_true(i, j) - A_est(perm[static_cast<std::size_t>(i)],
                                            perm[static_cast<std::size_t>(j)]);
      s += d * d;
    }
  return s / static_cast<double>(E * E);
}

std::vector<int> invert_perm(const std::vector<int>& perm) {
  check_perm(perm, perm.size(), "perm");
  std::vector<int> inv(perm.size(), 0);
  for (std::size_t i = 0; i < perm.size(); ++i)
    inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  return inv;
}

ForecastErrors forecast_errors(const MatrixXd& y_true, const MatrixXd& y_pred) {
  if (y_true.rows() != y_pred.rows() || y_true.cols() != y_pred.cols())
    throw ContractViolation("forecast_errors inputs must share the same shape");
  if (y_true.size() == 0) throw ContractViolation("forecast_errors needs at least one value");
  const MatrixXd diff = y_true - y_pred;
  ForecastErrors out;
  out.mse = diff.array().square().mean();
  out.mae = diff.array().abs().mean();
  return out;
}

namespace {

// Rows of an artifact table are matched to truth rows through their t column.
std::vector<Eigen::Index> time_index(const CsvTable& table, Eigen::Index truth_rows,
                                     const std::string& origin) {
  const Eigen::Index tc = table.col("t");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(table.data.rows()));
  for (Eigen::Index r = 0; r < table.data.rows(); ++r) {
    const double tv = table.data(r, tc);
    const Eigen::Index t = static_cast<Eigen::Index>(tv);
    if (static_cast<double>(t) != tv || t < 0 || t >= truth_rows)
      throw IoError(origin + ": time index " + fmt17(tv) + " does not address the truth series");
    idx[static_cast<std::size_t>(r)] = t;
  }
  return idx;
}

MatrixXd gather_rows(const MatrixXd& m, const std::vector<Eigen::Index>& rows) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
  return out;
}

std::vector<int> int_column(const CsvTable& table, const std::string& name,
                            const std::string& origin) {
  const Eigen::Index c = table.col(name);
  std::vector<int> out(static_cast<std::size_t>(table.data.rows()));
  for (Eigen::Index r = 0; r < table.data.rows(); ++r) {
    const double v = table.data(r, c);
    if (v != std::floor(v)) throw IoError(origin + ": column " + name + " must hold integers");
    out[static_cast<std::size_t>(r)] = static_cast<int>(v);
  }
  return out;
}

JsonValue mcc_json(const std::optional<MccResult>& m) {
  if (!m) return JsonValue::null();
  JsonValue o = JsonValue::object();
  o.set("score", JsonValue::number(m->score));
  o.set("assignment", JsonValue::from_ints(m->assignment));
  o.set("corr", JsonValue::from_matrix(m->corr));
  return o;
}

JsonValue opt_json(const std::optional<double>& v) {
  return v ? JsonValue::number(*v) : JsonValue::null();
}

}  // namespace

std::string format_metrics(const MetricsReport& m) {
  JsonValue root = JsonValue::object();
  root.set("mcc_s", mcc_json(m.mcc_s));
  root.set("mcc_e", mcc_json(m.mcc_e));
  root.set("mcc_all", mcc_json(m.mcc_all));
  root.set("aligned_mcc_s", opt_json(m.aligned_mcc_s));
  root.set("aligned_mcc_e", opt_json(m.aligned_mcc_e));
  root.set("env_accuracy", opt_json(m.env_acc));
  root.set("best_perm", m.best_perm.empty() ? JsonValue::null() : JsonValue::from_ints(m.best_perm));
  root.set("a_mse", opt_json(m.a_mse));
  root.set("forecast_mse", opt_json(m.forecast_mse));
  root.set("forecast_mae", opt_json(m.forecast_mae));
  return root.dump() + "\n";
}

MetricsReport report(const std::string& run_dir) {
  const RunConfig cfg = load_run_config(run_dir + "/run_config.ini");
  const std::string data_dir = cfg.paths.data_dir;
  const Correlation kind =
      cfg.eval.correlation == "spearman" ? Correlation::spearman : Correlation::pearson;

  MetricsReport m;

  // Latent identifiability over the test split.
  const std::string hat_path = run_dir + "/latents_hat.csv";
  const std::string zs_path = data_dir + "/test/latents_s.csv";
  const std::string ze_path = data_dir + "/test/latents_e.csv";
  if (fs::exists(hat_path) && fs::exists(zs_path) && fs::exists(ze_path)) {
    const CsvTable hat = read_csv(hat_path);
    const CsvTable zs_table = read_csv(zs_path);
    const CsvTable ze_table = read_csv(ze_path);
    const MatrixXd zs_truth = zs_table.data.rightCols(zs_table.data.cols() - 1);
    const MatrixXd ze_truth = ze_table.data.rightCols(ze_table.data.cols() - 1);
    const Eigen::Index n_s = zs_truth.cols(), n_e = ze_truth.cols();
    if (hat.data.cols() != 1 + n_s + n_e)
      throw IoError(hat_path + ": expected t plus " + std::to_string(n_s + n_e) + " latent columns");
    if (zs_truth.rows() != ze_truth.rows())
      throw IoError(data_dir + ": latent truth files disagree on length");

    const auto rows = time_index(hat, zs_truth.rows(), hat_path);
    const MatrixXd hat_s = hat.data.middleCols(1, n_s);
    const MatrixXd hat_e = hat.data.middleCols(1 + n_s, n_e);
    const MatrixXd true_s = gather_rows(zs_truth, rows);
    const MatrixXd true_e = gather_rows(ze_truth, rows);

    m.mcc_s = mcc(true_s, hat_s, kind);
    m.mcc_e = mcc(true_e, hat_e, kind);
    MatrixXd true_all(true_s.rows(), n_s + n_e), hat_all(true_s.rows(), n_s + n_e);
    true_all << true_s, true_e;
    hat_all << hat_s, hat_e;
    m.mcc_all = mcc(true_all, hat_all, kind);
    m.aligned_mcc_s = aligned_mcc(true_s, hat_s, kind);
    m.aligned_mcc_e = aligned_mcc(true_e, hat_e, kind);
  }

  // Environment identification over the split the decoder labeled.
  const std::string envs_hat_path = run_dir + "/envs_hat.csv";
  const std::string envs_true_path = data_dir + "/train/envs.csv";
  if (fs::exists(envs_hat_path) && fs::exists(envs_true_path)) {
    const CsvTable hat = read_csv(envs_hat_path);
    const CsvTable truth = read_csv(envs_true_path);
    const std::vector<int> e_truth_all = int_column(truth, "e", envs_true_path);
    const auto rows = time_index(hat, truth.data.rows(), envs_hat_path);
    const std::vector<int> e_hat = int_column(hat, "e", envs_hat_path);
    std::vector<int> e_truth(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r)
      e_truth[r] = e_truth_all[static_cast<std::size_t>(rows[r])];

    const EnvAccuracy acc = env_accuracy(e_truth, e_hat, cfg.gen.env_count);
    m.env_acc = acc.accuracy;
    m.best_perm = acc.best_perm;

    const std::string a_true_path = data_dir + "/transition.csv";
    const std::string arhmm_path = run_dir + "/arhmm.json";
    if (fs::exists(a_true_path) && fs::exists(arhmm_path)) {
      const MatrixXd A_true = read_csv(a_true_path).data;
      const hmm::Arhmm fitted = hmm::load_arhmm(arhmm_path);
      m.a_mse = transition_mse(A_true, fitted.A, invert_perm(acc.best_perm));
    }
  }

  // Forecast quality over the test split.
  const std::string fc_path = run_dir + "/forecast.csv";
  const std::string obs_path = data_dir + "/test/observations.csv";
  if (fs::exists(fc_path) && fs::exists(obs_path)) {
    const CsvTable fc = read_csv(fc_path);
    const CsvTable obs = read_csv(obs_path);
    const MatrixXd y_all = obs.data.rightCols(obs.data.cols() - 1);
    if (fc.data.cols() != y_all.cols() + 2)
      throw IoError(fc_path + ": expected t, one prediction per series column, and e_hat");
    const auto rows = time_index(fc, y_all.rows(), fc_path);
    const MatrixXd y_pred = fc.data.middleCols(1, y_all.cols());
    const ForecastErrors fe = forecast_errors(gather_rows(y_all, rows), y_pred);
    m.forecast_mse = fe.mse;
    m.forecast_mae = fe.mae;
  }

  write_text_file(run_dir + "/metrics.json", format_metrics(m));
  return m;
}

}  // namespace idea::eval
