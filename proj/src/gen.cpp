#include "idea/gen.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "idea/common.hpp"
#include "idea/csv.hpp"
#include "idea/jsonio.hpp"

namespace idea::gen {

namespace {

constexpr double kStochTol = 1e-12;
constexpr double kRankTol = 1e-6;

int draw_from(const VectorXd& probs, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u <= acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

double spectral_norm(const MatrixXd& m) {
  Eigen::JacobiSVD<MatrixXd> svd(m);
  return svd.singularValues()[0];
}

}  // namespace

void MarkovSpec::validate() const {
  if (E < 2) throw ContractViolation("MarkovSpec: need at least two environments");
  if (A.rows() != E || A.cols() != E || pi.size() != E)
    throw ContractViolation("MarkovSpec: shape mismatch");
  if (A.minCoeff() < 0.0 || pi.minCoeff() < 0.0)
    throw ContractViolation("MarkovSpec: negative probability");
  for (int i = 0; i < E; ++i)
    if (std::abs(A.row(i).sum() - 1.0) > kStochTol)
      throw ContractViolation("MarkovSpec: row " + std::to_string(i) + " does not sum to 1");
  if (std::abs(pi.sum() - 1.0) > kStochTol)
    throw ContractViolation("MarkovSpec: initial distribution does not sum to 1");
}

std::string AssumptionReport::failures() const {
  std::ostringstream out;
  if (!full_rank_ok) out << " transition_full_rank";
  if (!dwell_ok) out << " min_dwell";
  if (!separation_ok) out << " mean_separation";
  if (!v_independence_ok) out << " v_independence";
  if (!w_independence_ok) out << " w_independence";
  return out.str();
}

MarkovSpec make_markov_spec(int E, Rng& rng) {
  if (E < 2) throw ContractViolation("make_markov_spec: need at least two environments");
  MarkovSpec spec;
  spec.E = E;
  spec.A.resize(E, E);
  auto dirichlet_row = [&](Eigen::Index n) {
    VectorXd g(n);
    for (Eigen::Index i = 0; i < n; ++i) g[i] = -std::log(rng.uniform());
    return VectorXd(g / g.sum());
  };
  for (int i = 0; i < E; ++i) {
    VectorXd d = dirichlet_row(E);
    spec.A.row(i) = 0.3 * d.transpose();
    spec.A(i, i) += 0.7;
    spec.A.row(i) /= spec.A.row(i).sum();  // guard accumulated rounding
  }
  spec.pi = dirichlet_row(E);
  spec.pi /= spec.pi.sum();
  spec.validate();
  return spec;
}

std::vector<int> sample_markov(const MarkovSpec& spec, long T, Rng& rng) {
  spec.validate();
  if (T < 2) throw ContractViolation("sample_markov: need T >= 2 for the dwell floor");
  std::vector<int> e(static_cast<std::size_t>(T));
  e[0] = draw_from(spec.pi, rng);
  int run = 1;
  for (long t = 1; t < T; ++t) {
    const int prev = e[static_cast<std::size_t>(t - 1)];
    int next;
    if (run < 2) {
      next = prev;  // a fresh run must reach length 2
    } else {
      next = draw_from(spec.A.row(prev), rng);
      if (next != prev && t == T - 1) next = prev;  // no singleton tail
    }
    run = (next == prev) ? run + 1 : 1;
    e[static_cast<std::size_t>(t)] = next;
  }
  return e;
}

MatrixXd sample_nonstationary(const TrueSystem& sys, const std::vector<int>& e, Rng& rng) {
  const long T = static_cast<long>(e.size());
  MatrixXd z(T, sys.n_e);
  for (long t = 0; t < T; ++t) {
    const int env = e[static_cast<std::size_t>(t)];
    if (env < 0 || env >= sys.markov.E)
      throw ContractViolation("sample_nonstationary: environment index out of range");
    for (int j = 0; j < sys.n_e; ++j)
      z(t, j) = sys.env.mean(env, j) + sys.env.sigma(env, j) * rng.normal();
  }
  return z;
}

MatrixXd sample_stationary(const TrueSystem& sys, long T, Rng& rng) {
  if (T < sys.lag) throw ContractViolation("sample_stationary: T shorter than the lag");
  MatrixXd z(T, sys.n_s);
  for (long t = 0; t < sys.lag; ++t)
    for (int i = 0; i < sys.n_s; ++i) z(t, i) = rng.normal();
  VectorXd ctx(sys.n_s * sys.lag);
  for (long t = sys.lag; t < T; ++t) {
    for (int l = 0; l < sys.lag; ++l)
      ctx.segment(l * sys.n_s, sys.n_s) = z.row(t - sys.lag + l).transpose();
    const VectorXd mean = substrate::mlp_apply(sys.f_s, ctx);
    for (int i = 0; i < sys.n_s; ++i) z(t, i) = mean[i] + sys.sigma_s[i] * rng.normal();
  }
  return z;
}

MatrixXd mix(const TrueSystem& sys, const MatrixXd& z) {
  if (z.cols() != sys.n())
    throw ContractViolation("mix: latent width does not match the system");
  MatrixXd x(z.rows(), sys.n());
  for (Eigen::Index t = 0; t < z.rows(); ++t)
    x.row(t) = substrate::mlp_apply(sys.mixing, z.row(t).transpose()).transpose();
  return x;
}

TrueSystem make_true_system(const GenConfig& cfg, Rng& rng) {
  TrueSystem sys;
  sys.n_s = cfg.n_s;
  sys.n_e = cfg.n_e;
  sys.lag = cfg.lag;
  sys.markov = make_markov_spec(cfg.env_count, rng);

  // Stationary innovation scales: log-spaced per dimension with geometric
  // mean at the configured base. Distinct scales pin the coordinate axes
  // of the block: rotating the latents would correlate the innovations
  // across dimensions, which no per-dimension transition model matches,
  // so only axis permutations preserve the fitted likelihood.
  sys.sigma_s.resize(cfg.n_s);
  for (int i = 0; i < cfg.n_s; ++i) {
    const double u =
        cfg.n_s > 1 ? static_cast<double>(i) / (cfg.n_s - 1) - 0.5 : 0.0;
    sys.sigma_s[i] = cfg.sigma_s * std::pow(2.4, u);
  }

  // Env Gaussians: a geometric variance ladder across environments with
  // per-dimension jitter, so regimes differ in scale as well as location
  // and no rotation of the block leaves the family invariant. The bottom
  // level stays comparable to the stationary innovation so the quietest
  // regime offers no near-deterministic residuals that a state split could
  // model more cheaply than the regimes themselves.
  sys.env.mean.resize(cfg.env_count, cfg.n_e);
  sys.env.sigma.resize(cfg.env_count, cfg.n_e);
  for (int e = 0; e < cfg.env_count; ++e) {
    const double level =
        0.22 * std::pow(3.5, static_cast<double>(e) / (cfg.env_count - 1));
    for (int j = 0; j < cfg.n_e; ++j) sys.env.sigma(e, j) = level * rng.uniform(0.85, 1.18);
  }
  // Means sit just above the two-sigma floor the checker enforces. The
  // sampling box scales with that target rather than being fixed: a wide
  // box would push regime means far apart and let the environment block
  // swamp the stationary signal in observation space, while the variance
  // ladder above already keeps the regimes well told apart.
  const double required = 2.05 * sys.env.sigma.maxCoeff();
  const double half =
      std::max(0.9, 0.8 * required * (cfg.env_count - 1) /
                        std::sqrt(static_cast<double>(cfg.n_e)));
  for (int attempt = 0;; ++attempt) {
    if (attempt >= 1000)
      throw AssumptionError("make_true_system: could not separate environment means");
    for (int e = 0; e < cfg.env_count; ++e)
      for (int j = 0; j < cfg.n_e; ++j) sys.env.mean(e, j) = rng.uniform(-half, half);
    double sep = std::numeric_limits<double>::infinity();
    for (int a = 0; a < cfg.env_count; ++a)
      for (int b = a + 1; b < cfg.env_count; ++b)
        sep = std::min(sep, (sys.env.mean.row(a) - sys.env.mean.row(b)).norm());
    if (sep >= required) break;
  }

  // Transition mean net, rescaled to a contraction so the process is
  // stable. A mild internal slope keeps the dynamics smoothly nonlinear;
  // cfg.slope stays reserved for the observation map.
  sys.f_s = substrate::make_mlp({cfg.n_s * cfg.lag, 16, cfg.n_s}, 0.45, rng);
  for (auto& b : sys.f_s.layers[0].b) b = rng.uniform(-0.5, 0.5);
  sys.f_s.layers[0].W *= 1.0 / spectral_norm(sys.f_s.layers[0].W);
  sys.f_s.layers[1].W *= (0.7 / 1.0) / spectral_norm(sys.f_s.layers[1].W);
  for (auto& b : sys.f_s.layers[1].b) b = rng.uniform(-0.3, 0.3);

  // Observation map: two square leaky-relu layers with clamped singular
  // values, so the map is invertible with a modest condition number.
  sys.mixing.layers.clear();
  for (int layer = 0; layer < 2; ++layer) {
    substrate::Layer l;
    MatrixXd raw(sys.n(), sys.n());
    for (Eigen::Index i = 0; i < raw.rows(); ++i)
      for (Eigen::Index j = 0; j < raw.cols(); ++j)
        raw(i, j) = rng.normal() / std::sqrt(static_cast<double>(sys.n()));
    Eigen::JacobiSVD<MatrixXd> svd(raw, Eigen::ComputeFullU | Eigen::ComputeFullV);
    VectorXd s = svd.singularValues();
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = std::clamp(s[i], 0.7, 1.75);
    l.W = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
    l.b.resize(sys.n());
    for (auto& b : l.b) b = rng.uniform(-0.2, 0.2);
    l.act = substrate::Act::leaky_relu;
    l.slope = cfg.slope;
    sys.mixing.layers.push_back(std::move(l));
  }
  return sys;
}

AssumptionReport check_assumptions(const TrueSystem& sys, const std::vector<int>& e_true,
                                   Rng& rng) {
  AssumptionReport rep;
  const int E = sys.markov.E;

  Eigen::JacobiSVD<MatrixXd> svd(sys.markov.A);
  rep.a_min_singular = svd.singularValues().minCoeff();
  rep.full_rank_ok = rep.a_min_singular > kRankTol;
  rep.warn_reducible = false;
  for (int i = 0; i < E; ++i)
    for (int j = 0; j < E; ++j)
      if (i != j && sys.markov.A(i, j) < 1e-12) rep.warn_reducible = true;

  if (e_true.size() < 2) {
    rep.min_dwell = static_cast<int>(e_true.size());
    rep.dwell_ok = false;
  } else {
    int min_run = static_cast<int>(e_true.size());
    int run = 1;
    for (std::size_t t = 1; t < e_true.size(); ++t) {
      if (e_true[t] == e_true[t - 1]) {
        ++run;
      } else {
        min_run = std::min(min_run, run);
        run = 1;
      }
    }
    min_run = std::min(min_run, run);
    rep.min_dwell = min_run;
    rep.dwell_ok = min_run >= 2;
  }

  rep.separation_required = 2.0 * sys.env.sigma.maxCoeff();
  rep.mean_separation = std::numeric_limits<double>::infinity();
  for (int a = 0; a < E; ++a)
    for (int b = a + 1; b < E; ++b)
      rep.mean_separation =
          std::min(rep.mean_separation, (sys.env.mean.row(a) - sys.env.mean.row(b)).norm());
  rep.separation_ok = rep.mean_separation >= rep.separation_required;

  // Sensitivity of the transition score to the history, probed by central
  // differences at n_s + 1 random contexts. The rows v(ctx_l) - v(ctx_0)
  // must be independent for every output dimension. The requirement is that
  // some such context set exists, so a handful of fresh sets are tried before
  // the check is declared failed.
  if (sys.sigma_s <= 0.0) {
    rep.v_min_singular = 0.0;
    rep.v_independence_ok = false;
  } else {
    const int ctx_dim = sys.n_s * sys.lag;
    const double h = 1e-4;
    const double inv_var = 1.0 / (sys.sigma_s * sys.sigma_s);
    auto v_at = [&](const VectorXd& ctx) {
      MatrixXd v(sys.n_s, ctx_dim);
      VectorXd cp = ctx, cm = ctx;
      for (int j = 0; j < ctx_dim; ++j) {
        cp[j] = ctx[j] + h;
        cm[j] = ctx[j] - h;
        const VectorXd fp = substrate::mlp_apply(sys.f_s, cp);
        const VectorXd fm = substrate::mlp_apply(sys.f_s, cm);
        v.col(j) = (fp - fm) * (inv_var / (2.0 * h));
        cp[j] = ctx[j];
        cm[j] = ctx[j];
      }
      return v;
    };
    rep.v_min_singular = 0.0;
    for (int probe = 0; probe < 8 && rep.v_min_singular <= kRankTol; ++probe) {
      std::vector<MatrixXd> vs;
      for (int l = 0; l <= sys.n_s; ++l) {
        VectorXd c(ctx_dim);
        for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = rng.normal();
        vs.push_back(v_at(c));
      }
      double worst = std::numeric_limits<double>::infinity();
      for (int k = 0; k < sys.n_s; ++k) {
        MatrixXd diff(sys.n_s, ctx_dim);
        for (int l = 1; l <= sys.n_s; ++l) diff.row(l - 1) = vs[l].row(k) - vs[0].row(k);
        Eigen::JacobiSVD<MatrixXd> dsvd(diff);
        worst = std::min(worst, dsvd.singularValues().minCoeff());
      }
      rep.v_min_singular = std::max(rep.v_min_singular, worst);
    }
    rep.v_independence_ok = rep.v_min_singular > kRankTol;
  }

  // Same idea for the environment block, where the score has a closed form:
  // d log p / d z_j = -(z_j - mean_ej) / sigma_ej^2.
  {
    rep.w_min_singular = 0.0;
    for (int probe = 0; probe < 5; ++probe) {
      VectorXd z(sys.n_e);
      for (int j = 0; j < sys.n_e; ++j) z[j] = rng.normal();
      MatrixXd diff(E - 1, sys.n_e);
      auto w_at = [&](int env) {
        VectorXd w(sys.n_e);
        for (int j = 0; j < sys.n_e; ++j) {
          const double s2 = sys.env.sigma(env, j) * sys.env.sigma(env, j);
          w[j] = -(z[j] - sys.env.mean(env, j)) / s2;
        }
        return w;
      };
      const VectorXd w0 = w_at(0);
      for (int env = 1; env < E; ++env) diff.row(env - 1) = (w_at(env) - w0).transpose();
      Eigen::JacobiSVD<MatrixXd> wsvd(diff);
      rep.w_min_singular = std::max(rep.w_min_singular, wsvd.singularValues().minCoeff());
    }
    rep.w_independence_ok = rep.w_min_singular > kRankTol;
  }

  return rep;
}

namespace {

Dataset assemble_split(const TrueSystem& sys, const GenConfig& cfg, long T, Rng& env_rng,
                       Rng& noise_rng) {
  Dataset d;
  d.e_true = sample_markov(sys.markov, T, env_rng);
  d.z_s = sample_stationary(sys, T, noise_rng);
  d.z_e = sample_nonstationary(sys, d.e_true, noise_rng);
  MatrixXd z(T, sys.n());
  z.leftCols(sys.n_s) = d.z_s;
  z.rightCols(sys.n_e) = d.z_e;
  d.x = mix(sys, z);
  if (!d.x.allFinite()) throw NumericError("generated observations");
  d.t_split = cfg.t_split;
  d.window = cfg.window;
  d.stride = cfg.stride;
  return d;
}

}  // namespace

GeneratedData generate(const GenConfig& cfg, std::uint64_t seed) {
  Rng sys_rng(mix_seed(seed, 1));
  return generate_with_system(make_true_system(cfg, sys_rng), cfg, seed);
}

GeneratedData generate_with_system(TrueSystem sys, const GenConfig& cfg, std::uint64_t seed) {
  GeneratedData out;
  out.system = std::move(sys);
  Rng train_env(mix_seed(seed, 2)), train_noise(mix_seed(seed, 3));
  Rng test_env(mix_seed(seed, 4)), test_noise(mix_seed(seed, 5));
  out.train = assemble_split(out.system, cfg, cfg.t_train, train_env, train_noise);
  out.test = assemble_split(out.system, cfg, cfg.t_test, test_env, test_noise);
  Rng probe(mix_seed(seed, 6));
  out.report = check_assumptions(out.system, out.train.e_true, probe);
  if (!out.report.all_ok())
    throw AssumptionError("generated system failed checks:" + out.report.failures());
  return out;
}

namespace {

void write_split(const std::string& dir, const Dataset& d, int n_s, int n_e) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const long T = d.T();
  auto with_time = [&](const MatrixXd& m) {
    MatrixXd out(m.rows(), m.cols() + 1);
    for (Eigen::Index t = 0; t < m.rows(); ++t) out(t, 0) = static_cast<double>(t);
    out.rightCols(m.cols()) = m;
    return out;
  };
  std::vector<std::string> xh{"t"};
  for (int j = 0; j < n_s + n_e; ++j) xh.push_back("x" + std::to_string(j));
  write_csv(dir + "/observations.csv", xh, with_time(d.x), {true});

  std::vector<std::string> sh{"t"};
  for (int j = 0; j < n_s; ++j) sh.push_back("zs" + std::to_string(j));
  write_csv(dir + "/latents_s.csv", sh, with_time(d.z_s), {true});

  std::vector<std::string> eh{"t"};
  for (int j = 0; j < n_e; ++j) eh.push_back("ze" + std::to_string(j));
  write_csv(dir + "/latents_e.csv", eh, with_time(d.z_e), {true});

  MatrixXd envs(T, 2);
  for (long t = 0; t < T; ++t) {
    envs(t, 0) = static_cast<double>(t);
    envs(t, 1) = static_cast<double>(d.e_true[static_cast<std::size_t>(t)]);
  }
  write_csv(dir + "/envs.csv", {"t", "e"}, envs, {true, true});
}

}  // namespace

void write_dataset_dir(const std::string& dir, const GeneratedData& data, const GenConfig& cfg,
                       std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_split(dir + "/train", data.train, cfg.n_s, cfg.n_e);
  write_split(dir + "/test", data.test, cfg.n_s, cfg.n_e);

  std::vector<std::string> ah;
  for (int j = 0; j < data.system.markov.E; ++j) ah.push_back("a" + std::to_string(j));
  write_csv(dir + "/transition.csv", ah, data.system.markov.A);

  JsonValue root = JsonValue::object();
  root.set("seed", JsonValue::integer(static_cast<long long>(seed)));
  JsonValue g = JsonValue::object();
  g.set("n_s", JsonValue::integer(cfg.n_s));
  g.set("n_e", JsonValue::integer(cfg.n_e));
  g.set("env_count", JsonValue::integer(cfg.env_count));
  g.set("lag", JsonValue::integer(cfg.lag));
  g.set("t_train", JsonValue::integer(cfg.t_train));
  g.set("t_test", JsonValue::integer(cfg.t_test));
  g.set("window", JsonValue::integer(cfg.window));
  g.set("t_split", JsonValue::integer(cfg.t_split));
  g.set("stride", JsonValue::integer(cfg.stride));
  g.set("sigma_s", JsonValue::number(cfg.sigma_s));
  g.set("slope", JsonValue::number(cfg.slope));
  root.set("gen", std::move(g));
  JsonValue checks = JsonValue::object();
  checks.set("full_rank_ok", JsonValue::boolean(data.report.full_rank_ok));
  checks.set("dwell_ok", JsonValue::boolean(data.report.dwell_ok));
  checks.set("separation_ok", JsonValue::boolean(data.report.separation_ok));
  checks.set("v_independence_ok", JsonValue::boolean(data.report.v_independence_ok));
  checks.set("w_independence_ok", JsonValue::boolean(data.report.w_independence_ok));
  checks.set("warn_reducible", JsonValue::boolean(data.report.warn_reducible));
  checks.set("a_min_singular", JsonValue::number(data.report.a_min_singular));
  checks.set("min_dwell", JsonValue::integer(data.report.min_dwell));
  checks.set("mean_separation", JsonValue::number(data.report.mean_separation));
  checks.set("separation_required", JsonValue::number(data.report.separation_required));
  checks.set("v_min_singular", JsonValue::number(data.report.v_min_singular));
  checks.set("w_min_singular", JsonValue::number(data.report.w_min_singular));
  root.set("assumptions", std::move(checks));
  write_text_file(dir + "/gen_config.json", root.dump());
}

Dataset read_split(const std::string& split_dir, int t_split, int window, int stride) {
  namespace fs = std::filesystem;
  Dataset d;
  d.t_split = t_split;
  d.window = window;
  d.stride = stride;
  CsvTable obs = read_csv(split_dir + "/observations.csv");
  d.x = obs.data.rightCols(obs.data.cols() - 1);

  if (fs::exists(split_dir + "/envs.csv")) {
    CsvTable envs = read_csv(split_dir + "/envs.csv");
    d.e_true.resize(static_cast<std::size_t>(envs.data.rows()));
    for (Eigen::Index t = 0; t < envs.data.rows(); ++t)
      d.e_true[static_cast<std::size_t>(t)] = static_cast<int>(envs.data(t, envs.col("e")));
  }
  if (fs::exists(split_dir + "/latents_s.csv")) {
    CsvTable zs = read_csv(split_dir + "/latents_s.csv");
    d.z_s = zs.data.rightCols(zs.data.cols() - 1);
  }
  if (fs::exists(split_dir + "/latents_e.csv")) {
    CsvTable ze = read_csv(split_dir + "/latents_e.csv");
    d.z_e = ze.data.rightCols(ze.data.cols() - 1);
  }
  return d;
}

}  // namespace idea::gen
