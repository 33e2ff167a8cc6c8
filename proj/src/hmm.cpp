#include "idea/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "idea/common.hpp"
#include "idea/jsonio.hpp"

namespace idea::hmm {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logsumexp(const double* v, int n) {
  double m = kNegInf;
  for (int i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

void check_stochastic(const Eigen::Ref<const VectorXd>& row, const char* what) {
  double s = 0.0;
  for (int i = 0; i < row.size(); ++i) {
    if (!std::isfinite(row(i)) || row(i) < 0.0)
      throw ContractViolation(std::string(what) + " entries must be finite and nonnegative");
    s += row(i);
  }
  if (std::abs(s - 1.0) > 1e-9)
    throw ContractViolation(std::string(what) + " must sum to 1");
}

void check_input(const Arhmm& model, const MatrixXd& x) {
  model.validate();
  if (x.rows() < 1) throw ContractViolation("observation sequence must have at least one row");
  if (x.cols() != model.dim())
    throw ContractViolation("observation dimension does not match the model");
  if (!x.allFinite()) throw ContractViolation("observations must be finite");
}

// Weighted least-squares accumulator for one state. Rows pair a regressor
// phi = [x_prev; 1] (or [0; 1] for sequence starts) with a target x and a
// responsibility weight; solve() recovers [W b] and residual variances.
struct StateAccum {
  MatrixXd M;   // (n+1) x (n+1)
  MatrixXd R;   // (n+1) x n
  VectorXd S;   // n, weighted sum of squared targets
  double sw = 0.0;

  explicit StateAccum(int n)
      : M(MatrixXd::Zero(n + 1, n + 1)), R(MatrixXd::Zero(n + 1, n)), S(VectorXd::Zero(n)) {}

  void add(const VectorXd& phi, const Eigen::Ref<const VectorXd>& x, double w) {
    M.noalias() += w * phi * phi.transpose();
    R.noalias() += w * phi * x.transpose();
    S += w * x.cwiseProduct(x);
    sw += w;
  }

  ArState solve(const ArState& prev, bool* floor_hit) const {
    const int n = static_cast<int>(S.size());
    if (sw < 1e-12) return prev;  // state got no responsibility, keep it
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
    const VectorXd& ev = es.eigenvalues();
    double thresh = 1e-12 * std::max(ev(n), 1.0);
    VectorXd inv = (ev.array() > thresh).select(ev.array().inverse(), 0.0);
    MatrixXd beta = es.eigenvectors() * inv.asDiagonal() *
                    es.eigenvectors().transpose() * R;  // (n+1) x n
    ArState out;
    out.W = beta.topRows(n).transpose();
    out.b = beta.row(n).transpose();
    out.logvar.resize(n);
    for (int d = 0; d < n; ++d) {
      double rss = S(d) - 2.0 * beta.col(d).dot(R.col(d)) + beta.col(d).dot(M * beta.col(d));
      double var = rss / sw;
      if (var < kVarianceFloor) {
        var = kVarianceFloor;
        if (floor_hit) *floor_hit = true;
      }
      out.logvar(d) = std::log(var);
    }
    return out;
  }
};

VectorXd make_phi(const Eigen::Ref<const VectorXd>& x_prev) {
  VectorXd phi(x_prev.size() + 1);
  phi.head(x_prev.size()) = x_prev;
  phi(x_prev.size()) = 1.0;
  return phi;
}

VectorXd make_phi0(int n) {
  VectorXd phi = VectorXd::Zero(n + 1);
  phi(n) = 1.0;
  return phi;
}

MatrixXd default_transitions(int E) {
  if (E == 1) return MatrixXd::Ones(1, 1);
  MatrixXd A(E, E);
  A.setConstant(0.2 / (E - 1));
  A.diagonal().setConstant(0.8);
  return A;
}

struct PooledStats {
  VectorXd mean;
  VectorXd stddev;
  ArState global;  // single AR fit over all windows
  long pairs = 0;
};

PooledStats pool_windows(const std::vector<MatrixXd>& windows) {
  const int n = static_cast<int>(windows[0].cols());
  PooledStats st;
  st.mean = VectorXd::Zero(n);
  long rows = 0;
  for (const MatrixXd& w : windows) {
    st.mean += w.colwise().sum().transpose();
    rows += w.rows();
  }
  st.mean /= static_cast<double>(rows);
  VectorXd var = VectorXd::Zero(n);
  for (const MatrixXd& w : windows)
    var += (w.rowwise() - st.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  var /= static_cast<double>(rows);
  st.stddev = var.array().max(kVarianceFloor).sqrt();

  StateAccum acc(n);
  for (const MatrixXd& w : windows)
    for (int t = 1; t < w.rows(); ++t) {
      acc.add(make_phi(w.row(t - 1).transpose()), w.row(t).transpose(), 1.0);
      ++st.pairs;
    }
  ArState fallback;
  fallback.W = MatrixXd::Zero(n, n);
  fallback.b = st.mean;
  fallback.logvar = var.array().max(kVarianceFloor).log();
  st.global = acc.solve(fallback, nullptr);
  return st;
}

Arhmm init_perturbed(const std::vector<MatrixXd>& windows, int E, const PooledStats& st,
                     std::uint64_t seed) {
  const int n = static_cast<int>(windows[0].cols());
  Rng rng(seed);
  double wscale = 0.1 * std::max(1e-3, st.global.W.norm() / n);
  Arhmm model;
  model.E = E;
  model.A = default_transitions(E);
  model.pi = VectorXd::Constant(E, 1.0 / E);
  model.states.resize(E);
  for (int e = 0; e < E; ++e) {
    ArState s = st.global;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) s.W(i, j) += wscale * rng.normal();
    for (int d = 0; d < n; ++d) s.b(d) += 0.5 * st.stddev(d) * rng.normal();
    model.states[e] = std::move(s);
  }
  return model;
}

// Clusters one-step differences, then fits each state on its cluster's
// transition pairs. Transition counts between consecutive cluster labels
// seed A.
Arhmm init_kmeans(const std::vector<MatrixXd>& windows, int E, const PooledStats& st,
                  std::uint64_t seed) {
  const int n = static_cast<int>(windows[0].cols());
  std::vector<std::pair<int, int>> index;  // (window, t) with t >= 1
  for (int w = 0; w < static_cast<int>(windows.size()); ++w)
    for (int t = 1; t < windows[w].rows(); ++t) index.emplace_back(w, t);
  const long m = static_cast<long>(index.size());
  if (m < E) return init_perturbed(windows, E, st, seed);

  MatrixXd diffs(m, n);
  for (long r = 0; r < m; ++r) {
    const MatrixXd& w = windows[index[r].first];
    diffs.row(r) = w.row(index[r].second) - w.row(index[r].second - 1);
  }

  Rng rng(seed);
  MatrixXd centers(E, n);
  std::vector<long> picked;
  while (static_cast<int>(picked.size()) < E) {
    long c = rng.uniform_int(static_cast<int>(m));
    if (std::find(picked.begin(), picked.end(), c) == picked.end()) picked.push_back(c);
  }
  for (int e = 0; e < E; ++e) centers.row(e) = diffs.row(picked[e]);

  std::vector<int> label(m, 0);
  for (int iter = 0; iter < 25; ++iter) {
    for (long r = 0; r < m; ++r) {
      int best = 0;
      double bd = (diffs.row(r) - centers.row(0)).squaredNorm();
      for (int e = 1; e < E; ++e) {
        double d = (diffs.row(r) - centers.row(e)).squaredNorm();
        if (d < bd) { bd = d; best = e; }
      }
      label[r] = best;
    }
    MatrixXd sums = MatrixXd::Zero(E, n);
    std::vector<long> counts(E, 0);
    for (long r = 0; r < m; ++r) {
      sums.row(label[r]) += diffs.row(r);
      ++counts[label[r]];
    }
    for (int e = 0; e < E; ++e) {
      if (counts[e] == 0)
        centers.row(e) = diffs.row(rng.uniform_int(static_cast<int>(m)));
      else
        centers.row(e) = sums.row(e) / static_cast<double>(counts[e]);
    }
  }

  Arhmm model;
  model.E = E;
  model.pi = VectorXd::Constant(E, 1.0 / E);
  model.states.resize(E);
  ArState fallback;
  fallback.W = MatrixXd::Zero(n, n);
  fallback.b = st.mean;
  fallback.logvar = VectorXd::Constant(n, std::log(kVarianceFloor));
  for (int d = 0; d < n; ++d)
    fallback.logvar(d) = std::log(std::max(kVarianceFloor, st.stddev(d) * st.stddev(d)));
  for (int e = 0; e < E; ++e) {
    StateAccum acc(n);
    for (long r = 0; r < m; ++r) {
      if (label[r] != e) continue;
      const MatrixXd& w = windows[index[r].first];
      acc.add(make_phi(w.row(index[r].second - 1).transpose()),
              w.row(index[r].second).transpose(), 1.0);
    }
    model.states[e] = acc.solve(fallback, nullptr);
  }

  MatrixXd counts = MatrixXd::Ones(E, E);  // add-one smoothing
  for (long r = 1; r < m; ++r)
    if (index[r].first == index[r - 1].first && index[r].second == index[r - 1].second + 1)
      counts(label[r - 1], label[r]) += 1.0;
  model.A = counts.array().colwise() / counts.rowwise().sum().array();
  return model;
}

struct EmAccum {
  VectorXd pi_num;
  MatrixXd a_num;
  std::vector<StateAccum> states;
  double windows = 0.0;

  EmAccum(int E, int n) : pi_num(VectorXd::Zero(E)), a_num(MatrixXd::Zero(E, E)) {
    states.reserve(E);
    for (int e = 0; e < E; ++e) states.emplace_back(n);
  }
};

void accumulate_window(const Arhmm& model, const MatrixXd& x, EmAccum* acc, double* ll) {
  Posteriors post = posterior_smooth(model, x);
  *ll += post.loglik;
  acc->pi_num += post.gamma.row(0).transpose();
  for (const MatrixXd& xi : post.xi) acc->a_num += xi;
  acc->windows += 1.0;
  const int n = model.dim();
  VectorXd phi0 = make_phi0(n);
  for (int e = 0; e < model.E; ++e)
    acc->states[e].add(phi0, x.row(0).transpose(), post.gamma(0, e));
  for (int t = 1; t < x.rows(); ++t) {
    VectorXd phi = make_phi(x.row(t - 1).transpose());
    for (int e = 0; e < model.E; ++e)
      acc->states[e].add(phi, x.row(t).transpose(), post.gamma(t, e));
  }
}

Arhmm maximize(const Arhmm& prev, const EmAccum& acc, bool* floor_hit) {
  Arhmm next = prev;
  double pisum = acc.pi_num.sum();
  if (pisum > 1e-12) next.pi = acc.pi_num / pisum;
  for (int e = 0; e < prev.E; ++e) {
    double rowsum = acc.a_num.row(e).sum();
    if (rowsum > 1e-12) next.A.row(e) = acc.a_num.row(e) / rowsum;
    next.states[e] = acc.states[e].solve(prev.states[e], floor_hit);
  }
  return next;
}

struct FitOutcome {
  Arhmm model;
  std::vector<double> trace;
  bool floor_hit = false;
};

FitOutcome run_em(const std::vector<MatrixXd>& windows, Arhmm model, const EmOptions& opts) {
  FitOutcome out;
  const int n = model.dim();
  double prev_ll = kNegInf;
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    EmAccum acc(model.E, n);
    double ll = 0.0;
    for (const MatrixXd& w : windows) accumulate_window(model, w, &acc, &ll);
    if (!std::isfinite(ll)) throw NumericError("hmm_loglik");
    out.trace.push_back(ll);
    if (iter > 0 && std::abs(ll - prev_ll) <= opts.tol * (1.0 + std::abs(ll))) break;
    prev_ll = ll;
    if (iter + 1 == opts.max_iters) break;  // keep model consistent with trace
    model = maximize(model, acc, &out.floor_hit);
  }
  out.model = std::move(model);
  return out;
}

}  // namespace

int Arhmm::dim() const {
  return states.empty() ? 0 : static_cast<int>(states[0].b.size());
}

void Arhmm::validate() const {
  if (E < 1) throw ContractViolation("state count must be at least 1");
  if (static_cast<int>(states.size()) != E)
    throw ContractViolation("state list does not match the state count");
  if (A.rows() != E || A.cols() != E || pi.size() != E)
    throw ContractViolation("transition shape does not match the state count");
  for (int e = 0; e < E; ++e) check_stochastic(A.row(e).transpose(), "transition row");
  check_stochastic(pi, "initial distribution");
  const int n = dim();
  if (n < 1) throw ContractViolation("state dimension must be at least 1");
  for (const ArState& s : states) {
    if (s.W.rows() != n || s.W.cols() != n || s.b.size() != n || s.logvar.size() != n)
      throw ContractViolation("state parameter shapes disagree");
    if (!s.W.allFinite() || !s.b.allFinite() || !s.logvar.allFinite())
      throw ContractViolation("state parameters must be finite");
    if ((s.logvar.array() < std::log(kVarianceFloor) - 1e-9).any())
      throw ContractViolation("state variance is below the floor");
  }
}

MatrixXd emission_logp(const Arhmm& model, const MatrixXd& x) {
  check_input(model, x);
  const int T = static_cast<int>(x.rows());
  const int n = model.dim();
  MatrixXd out(T, model.E);
  for (int e = 0; e < model.E; ++e) {
    const ArState& s = model.states[e];
    VectorXd ivar = (-s.logvar.array()).exp();
    double c = -0.5 * (n * kLog2Pi + s.logvar.sum());
    MatrixXd mean(T, n);
    mean.row(0) = s.b.transpose();
    if (T > 1)
      mean.bottomRows(T - 1) =
          (x.topRows(T - 1) * s.W.transpose()).rowwise() + s.b.transpose();
    out.col(e) =
        (-0.5 * ((x - mean).array().square().rowwise() * ivar.transpose().array())
                     .rowwise()
                     .sum() +
         c)
            .matrix();
  }
  return out;
}

double loglik(const Arhmm& model, const MatrixXd& x) {
  MatrixXd logB = emission_logp(model, x);
  const int T = static_cast<int>(x.rows());
  const int E = model.E;
  MatrixXd logA = model.A.array().max(0.0).log();
  VectorXd alpha = model.pi.array().log().matrix() + logB.row(0).transpose();
  VectorXd next(E), scratch(E);
  for (int t = 1; t < T; ++t) {
    for (int j = 0; j < E; ++j) {
      for (int i = 0; i < E; ++i) scratch(i) = alpha(i) + logA(i, j);
      next(j) = logsumexp(scratch.data(), E) + logB(t, j);
    }
    alpha = next;
  }
  return logsumexp(alpha.data(), E);
}

Posteriors posterior_smooth(const Arhmm& model, const MatrixXd& x) {
  MatrixXd logB = emission_logp(model, x);
  const int T = static_cast<int>(x.rows());
  const int E = model.E;
  MatrixXd logA = model.A.array().max(0.0).log();

  MatrixXd alpha(T, E), beta(T, E);
  alpha.row(0) = model.pi.array().log().matrix().transpose() + logB.row(0);
  VectorXd scratch(E);
  for (int t = 1; t < T; ++t)
    for (int j = 0; j < E; ++j) {
      for (int i = 0; i < E; ++i) scratch(i) = alpha(t - 1, i) + logA(i, j);
      alpha(t, j) = logsumexp(scratch.data(), E) + logB(t, j);
    }
  beta.row(T - 1).setZero();
  for (int t = T - 2; t >= 0; --t)
    for (int i = 0; i < E; ++i) {
      for (int j = 0; j < E; ++j) scratch(j) = logA(i, j) + logB(t + 1, j) + beta(t + 1, j);
      beta(t, i) = logsumexp(scratch.data(), E);
    }

  Posteriors post;
  scratch = alpha.row(T - 1).transpose();
  post.loglik = logsumexp(scratch.data(), E);
  if (!std::isfinite(post.loglik)) throw NumericError("hmm_loglik");

  post.gamma.resize(T, E);
  for (int t = 0; t < T; ++t) {
    for (int e = 0; e < E; ++e)
      post.gamma(t, e) = std::exp(alpha(t, e) + beta(t, e) - post.loglik);
    post.gamma.row(t) /= post.gamma.row(t).sum();
  }
  post.xi.reserve(T - 1);
  for (int t = 0; t + 1 < T; ++t) {
    MatrixXd xi(E, E);
    for (int i = 0; i < E; ++i)
      for (int j = 0; j < E; ++j)
        xi(i, j) = std::exp(alpha(t, i) + logA(i, j) + logB(t + 1, j) + beta(t + 1, j) -
                            post.loglik);
    xi /= xi.sum();
    post.xi.push_back(std::move(xi));
  }
  return post;
}

std::vector<int> viterbi(const Arhmm& model, const MatrixXd& x) {
  MatrixXd logB = emission_logp(model, x);
  const int T = static_cast<int>(x.rows());
  const int E = model.E;
  MatrixXd logA = model.A.array().max(0.0).log();
  MatrixXd delta(T, E);
  Eigen::MatrixXi bp(T, E);
  delta.row(0) = model.pi.array().log().matrix().transpose() + logB.row(0);
  bp.row(0).setZero();
  for (int t = 1; t < T; ++t)
    for (int j = 0; j < E; ++j) {
      int arg = 0;
      double best = delta(t - 1, 0) + logA(0, j);
      for (int i = 1; i < E; ++i) {
        double v = delta(t - 1, i) + logA(i, j);
        if (v > best) { best = v; arg = i; }  // ties keep the lower index
      }
      delta(t, j) = best + logB(t, j);
      bp(t, j) = arg;
    }
  std::vector<int> path(T);
  int arg = 0;
  for (int e = 1; e < E; ++e)
    if (delta(T - 1, e) > delta(T - 1, arg)) arg = e;
  path[T - 1] = arg;
  for (int t = T - 2; t >= 0; --t) path[t] = bp(t + 1, path[t + 1]);
  return path;
}

EmResult em_fit(const std::vector<MatrixXd>& windows, int E, const EmOptions& opts) {
  if (windows.empty()) throw ContractViolation("em_fit needs at least one window");
  if (E < 1) throw ContractViolation("state count must be at least 1");
  if (opts.restarts < 1 || opts.max_iters < 1 || !(opts.tol > 0.0))
    throw ContractViolation("em options must be positive");
  const int n = static_cast<int>(windows[0].cols());
  if (n < 1) throw ContractViolation("windows must have at least one column");
  for (const MatrixXd& w : windows) {
    if (w.cols() != n) throw ContractViolation("windows must share a column count");
    if (w.rows() < 2) throw ContractViolation("each window needs at least two rows");
    if (!w.allFinite()) throw ContractViolation("windows must be finite");
  }

  PooledStats st = pool_windows(windows);
  EmResult result;
  double best_ll = kNegInf;
  for (int r = 0; r < opts.restarts; ++r) {
    std::uint64_t seed = mix_seed(opts.seed, static_cast<std::uint64_t>(r));
    Arhmm init = (r == 0) ? init_kmeans(windows, E, st, seed)
                          : init_perturbed(windows, E, st, seed);
    FitOutcome fit = run_em(windows, std::move(init), opts);
    double ll = fit.trace.back();
    result.traces.push_back(fit.trace);
    if (ll > best_ll) {
      best_ll = ll;
      result.model = std::move(fit.model);
      result.best_restart = r;
      result.variance_floor_hit = fit.floor_hit;
    }
  }
  result.loglik = best_ll;
  return result;
}

std::vector<int> predict_env(const Arhmm& model, const MatrixXd& x_hist, int horizon,
                             EnvPrediction mode, std::uint64_t seed) {
  if (horizon < 0) throw ContractViolation("horizon must be nonnegative");
  std::vector<int> path = viterbi(model, x_hist);
  std::vector<int> out(horizon);
  int cur = path.back();
  Rng rng(seed);
  for (int h = 0; h < horizon; ++h) {
    if (mode == EnvPrediction::argmax) {
      int arg = 0;
      for (int e = 1; e < model.E; ++e)
        if (model.A(cur, e) > model.A(cur, arg)) arg = e;
      cur = arg;
    } else {
      double u = rng.uniform();
      double c = 0.0;
      int pick = model.E - 1;
      for (int e = 0; e < model.E; ++e) {
        c += model.A(cur, e);
        if (u < c) { pick = e; break; }
      }
      cur = pick;
    }
    out[h] = cur;
  }
  return out;
}

void save_arhmm(const std::string& path, const Arhmm& model) {
  model.validate();
  JsonValue root = JsonValue::object();
  root.set("E", JsonValue::integer(model.E));
  root.set("pi", JsonValue::from_vector(model.pi));
  root.set("A", JsonValue::from_matrix(model.A));
  JsonValue states = JsonValue::array();
  for (const ArState& s : model.states) {
    JsonValue js = JsonValue::object();
    js.set("W", JsonValue::from_matrix(s.W));
    js.set("b", JsonValue::from_vector(s.b));
    js.set("logvar", JsonValue::from_vector(s.logvar));
    states.push(std::move(js));
  }
  root.set("states", std::move(states));
  write_text_file(path, root.dump() + "\n");
}

Arhmm load_arhmm(const std::string& path) {
  nlohmann::json j = load_json(path);
  Arhmm model;
  model.E = json_field(j, "E").get<int>();
  model.pi = json_vector(json_field(j, "pi"));
  model.A = json_matrix(json_field(j, "A"));
  const nlohmann::json& states = json_field(j, "states");
  if (!states.is_array()) throw IoError("'states' must be an array in " + path);
  for (const auto& js : states) {
    ArState s;
    s.W = json_matrix(json_field(js, "W"));
    s.b = json_vector(json_field(js, "b"));
    s.logvar = json_vector(json_field(js, "logvar"));
    model.states.push_back(std::move(s));
  }
  try {
    model.validate();
  } catch (const ContractViolation& e) {
    throw IoError("invalid model in " + path + ": " + e.what());
  }
  return model;
}

}  // namespace idea::hmm
