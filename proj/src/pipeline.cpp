#include "idea/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "idea/common.hpp"
#include "idea/config.hpp"
#include "idea/csv.hpp"
#include "idea/eval.hpp"
#include "idea/gen.hpp"
#include "idea/hmm.hpp"
#include "idea/jsonio.hpp"
#include "idea/rng.hpp"
#include "idea/seqvae.hpp"

namespace idea::pipeline {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace fs = std::filesystem;

namespace {

void say(bool quiet, const std::string& msg) {
  if (!quiet) std::cout << msg << "\n";
}

// One catch clause per library error type so every failure lands on the
// documented exit code. Anything unrecognized escapes as 1.
template <typename Fn>
int guarded(Fn&& fn) {
  try {
    std::forward<Fn>(fn)();
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const AssumptionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitAssumption;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

RunConfig load_effective_config(const std::string& config_path,
                                std::optional<std::uint64_t> seed_override) {
  RunConfig cfg = load_run_config(config_path);
  if (seed_override) {
    cfg.seed = *seed_override;
  }
  return cfg;
}

// Every command leaves the config it actually ran with next to its outputs.
void echo_config(const RunConfig& cfg, const std::string& dir) {
  write_text_file(dir + "/run_config.ini", format_run_config(cfg));
}

gen::Dataset load_split(const RunConfig& cfg, const std::string& data_dir,
                        const std::string& split) {
  gen::Dataset d = gen::read_split(data_dir + "/" + split, cfg.gen.t_split, cfg.gen.window,
                                   cfg.gen.stride);
  if (d.x.cols() != cfg.gen.n()) {
    throw ConfigError("config expects " + std::to_string(cfg.gen.n()) + " observed dims but " +
                      data_dir + "/" + split + " has " + std::to_string(d.x.cols()));
  }
  return d;
}

std::vector<std::string> latent_header(const seqvae::ModelDims& dims) {
  std::vector<std::string> h{"t"};
  for (int i = 0; i < dims.n_s; ++i) h.push_back("zs" + std::to_string(i));
  for (int j = 0; j < dims.n_e; ++j) h.push_back("ze" + std::to_string(j));
  return h;
}

std::vector<std::string> forecast_header(int n) {
  std::vector<std::string> h{"t"};
  for (int i = 0; i < n; ++i) h.push_back("xhat" + std::to_string(i));
  h.push_back("e_hat");
  return h;
}

// Posterior-mean latents over consecutive non-overlapping history blocks;
// the tail short of a full block is dropped.
MatrixXd tile_latents(const seqvae::IdeaModel& model, const MatrixXd& x) {
  const int ts = model.dims.t_split;
  const int n_s = model.dims.n_s, n_e = model.dims.n_e;
  const long blocks = x.rows() / ts;
  const VectorXd zero_s = VectorXd::Zero(static_cast<Eigen::Index>(ts) * n_s);
  const VectorXd zero_e = VectorXd::Zero(static_cast<Eigen::Index>(ts) * n_e);
  MatrixXd out(blocks * ts, 1 + n_s + n_e);
  for (long b = 0; b < blocks; ++b) {
    const seqvae::Encoded enc = seqvae::encode(model, x.middleRows(b * ts, ts), zero_s, zero_e);
    for (int k = 0; k < ts; ++k) {
      const long r = b * ts + k;
      out(r, 0) = static_cast<double>(r);
      out.row(r).segment(1, n_s) = enc.z_s.segment(static_cast<Eigen::Index>(k) * n_s, n_s);
      out.row(r).segment(1 + n_s, n_e) = enc.z_e.segment(static_cast<Eigen::Index>(k) * n_e, n_e);
    }
  }
  return out;
}

// Rolls the forecaster across the stream in steps of one horizon, so the
// predictions cover [t_split, t_split + k * horizon) without overlap.
MatrixXd tile_forecast(const seqvae::IdeaModel& model, const hmm::Arhmm& env_model,
                       const MatrixXd& x) {
  const int ts = model.dims.t_split;
  const int h = model.dims.horizon();
  const int n = model.dims.n();
  if (x.rows() < ts + h) {
    throw ContractViolation("need at least " + std::to_string(ts + h) + " rows to forecast, got " +
                            std::to_string(x.rows()));
  }
  const long strides = (x.rows() - ts) / h;
  MatrixXd out(strides * h, 1 + n + 1);
  for (long s = 0; s < strides; ++s) {
    const long t0 = ts + s * h;
    const seqvae::ForecastResult fr =
        seqvae::forecast(model, env_model, x.middleRows(t0 - ts, ts), h);
    for (int k = 0; k < h; ++k) {
      const long r = s * h + k;
      out(r, 0) = static_cast<double>(t0 + k);
      out.row(r).segment(1, n) = fr.xhat.row(k);
      out(r, 1 + n) = static_cast<double>(fr.e_hat[static_cast<std::size_t>(k)]);
    }
  }
  return out;
}

void run_gen(const std::string& config_path, const std::string& out_dir,
             std::optional<std::uint64_t> seed_override, bool quiet) {
  RunConfig cfg = load_effective_config(config_path, seed_override);
  cfg.paths.data_dir = out_dir;
  const gen::GeneratedData data = gen::generate(cfg.gen, cfg.seed);
  gen::write_dataset_dir(out_dir, data, cfg.gen, cfg.seed);
  echo_config(cfg, out_dir);
  say(quiet, "wrote dataset (T_train=" + std::to_string(cfg.gen.t_train) +
                 ", T_test=" + std::to_string(cfg.gen.t_test) +
                 ", E=" + std::to_string(cfg.gen.env_count) + ") to " + out_dir);
}

void run_fit_hmm(const std::string& config_path, const std::string& data_dir,
                 const std::string& out_dir, std::optional<std::uint64_t> seed_override,
                 bool quiet) {
  RunConfig cfg = load_effective_config(config_path, seed_override);
  cfg.paths.data_dir = data_dir;
  cfg.paths.run_dir = out_dir;
  const gen::Dataset train = load_split(cfg, data_dir, "train");

  // The environment model is fitted on the unbroken stream; overlapping
  // windows would double-count steps and cut dwell runs at the seams.
  const std::vector<MatrixXd> windows{train.x};
  hmm::EmOptions opts;
  opts.restarts = cfg.hmm.restarts;
  opts.max_iters = cfg.hmm.max_iters;
  opts.tol = cfg.hmm.tol;
  opts.seed = mix_seed(cfg.seed, 200);
  const hmm::EmResult fit = hmm::em_fit(windows, cfg.gen.env_count, opts);
  if (fit.variance_floor_hit) {
    std::cerr << "warning: emission variance floor engaged during EM\n";
  }

  fs::create_directories(out_dir);
  hmm::save_arhmm(out_dir + "/arhmm.json", fit.model);

  const std::vector<int> path = hmm::viterbi(fit.model, train.x);
  MatrixXd envs(train.x.rows(), 2);
  for (long t = 0; t < train.x.rows(); ++t) {
    envs(t, 0) = static_cast<double>(t);
    envs(t, 1) = static_cast<double>(path[static_cast<std::size_t>(t)]);
  }
  write_csv(out_dir + "/envs_hat.csv", {"t", "e"}, envs, {true, true});

  long rows = 0;
  for (const auto& tr : fit.traces) rows += static_cast<long>(tr.size());
  MatrixXd trace(rows, 3);
  long r = 0;
  for (std::size_t restart = 0; restart < fit.traces.size(); ++restart) {
    for (std::size_t it = 0; it < fit.traces[restart].size(); ++it, ++r) {
      trace(r, 0) = static_cast<double>(restart);
      trace(r, 1) = static_cast<double>(it);
      trace(r, 2) = fit.traces[restart][it];
    }
  }
  write_csv(out_dir + "/hmm_trace.csv", {"restart", "iter", "loglik"}, trace, {true, true});

  echo_config(cfg, out_dir);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", fit.loglik);
  say(quiet, "fitted environment model: loglik=" + std::string(buf) + " (restart " +
                 std::to_string(fit.best_restart) + ") -> " + out_dir + "/arhmm.json");
}

void run_train(const std::string& config_path, const std::string& data_dir,
               const std::string& out_dir, std::optional<std::uint64_t> seed_override,
               bool quiet) {
  RunConfig cfg = load_effective_config(config_path, seed_override);
  cfg.paths.data_dir = data_dir;
  cfg.paths.run_dir = out_dir;
  const gen::Dataset train = load_split(cfg, data_dir, "train");
  const gen::Dataset test = load_split(cfg, data_dir, "test");

  const std::string checkpoint = out_dir + "/arhmm.json";
  if (!fs::exists(checkpoint)) {
    throw ConfigError("missing " + checkpoint + "; run fit-hmm into this directory first");
  }
  const hmm::Arhmm env_model = hmm::load_arhmm(checkpoint);
  if (env_model.dim() != cfg.gen.n() || env_model.E != cfg.gen.env_count) {
    throw ConfigError("environment checkpoint (dim " + std::to_string(env_model.dim()) + ", E " +
                      std::to_string(env_model.E) + ") disagrees with config");
  }

  std::vector<seqvae::TraceRow> trace;
  const seqvae::IdeaModel model = seqvae::train_phase2(train, env_model, cfg, &trace);
  seqvae::save_model(out_dir + "/idea_model.json", model, cfg.seed);

  MatrixXd trace_mat(static_cast<long>(trace.size()), 7);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& row = trace[i];
    trace_mat.row(static_cast<long>(i)) << static_cast<double>(row.epoch), row.rec, row.pre,
        row.kld_s, row.kld_e, row.total, row.recon_mse;
  }
  write_csv(out_dir + "/trace.csv", {"epoch", "rec", "pre", "kld_s", "kld_e", "total", "recon_mse"},
            trace_mat, {true});

  write_csv(out_dir + "/latents_hat.csv", latent_header(model.dims), tile_latents(model, test.x),
            {true});
  if (model.dims.horizon() > 0) {
    const int n = model.dims.n();
    std::vector<bool> int_cols(static_cast<std::size_t>(n) + 2, false);
    int_cols.front() = true;
    int_cols.back() = true;
    write_csv(out_dir + "/forecast.csv", forecast_header(n),
              tile_forecast(model, env_model, test.x), int_cols);
  }

  echo_config(cfg, out_dir);
  const double final_total = trace.empty() ? 0.0 : trace.back().total;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", final_total);
  say(quiet, "trained forecaster (" + std::to_string(trace.size()) + " epochs, final objective " +
                 std::string(buf) + ") -> " + out_dir + "/idea_model.json");
}

void print_score(bool quiet, const std::string& name, const std::optional<double>& v) {
  if (quiet || !v) return;
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-14s %.4f  (%.2f)", name.c_str(), *v, 100.0 * *v);
  std::cout << buf << "\n";
}

void print_raw(bool quiet, const std::string& name, const std::optional<double>& v) {
  if (quiet || !v) return;
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-14s %.6f", name.c_str(), *v);
  std::cout << buf << "\n";
}

void run_eval(const std::string& run_dir, bool quiet) {
  const eval::MetricsReport rep = eval::report(run_dir);
  const auto score = [](const std::optional<eval::MccResult>& m) {
    return m ? std::optional<double>(m->score) : std::nullopt;
  };
  print_score(quiet, "mcc_s", score(rep.mcc_s));
  print_score(quiet, "mcc_e", score(rep.mcc_e));
  print_score(quiet, "mcc_all", score(rep.mcc_all));
  print_score(quiet, "aligned_mcc_s", rep.aligned_mcc_s);
  print_score(quiet, "aligned_mcc_e", rep.aligned_mcc_e);
  print_score(quiet, "env_accuracy", rep.env_acc);
  print_raw(quiet, "a_mse", rep.a_mse);
  print_raw(quiet, "forecast_mse", rep.forecast_mse);
  print_raw(quiet, "forecast_mae", rep.forecast_mae);
  say(quiet, "wrote " + run_dir + "/metrics.json");
}

void run_forecast(const std::string& run_dir, const std::string& input_csv,
                  const std::string& out_csv, bool quiet) {
  load_run_config(run_dir + "/run_config.ini");  // run dir sanity, parse + validate
  const seqvae::IdeaModel model = seqvae::load_model(run_dir + "/idea_model.json");
  const hmm::Arhmm env_model = hmm::load_arhmm(run_dir + "/arhmm.json");
  if (model.dims.horizon() <= 0) {
    throw ConfigError("stored model has no forecast horizon");
  }

  const CsvTable table = read_csv(input_csv);
  const bool has_time = !table.header.empty() && table.header.front() == "t";
  const MatrixXd x =
      has_time ? MatrixXd(table.data.rightCols(table.data.cols() - 1)) : table.data;
  if (x.cols() != model.dims.n()) {
    throw ContractViolation(input_csv + " has " + std::to_string(x.cols()) +
                            " feature columns, model expects " + std::to_string(model.dims.n()));
  }

  const MatrixXd out = tile_forecast(model, env_model, x);
  const fs::path parent = fs::path(out_csv).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  const int n = model.dims.n();
  std::vector<bool> int_cols(static_cast<std::size_t>(n) + 2, false);
  int_cols.front() = true;
  int_cols.back() = true;
  write_csv(out_csv, forecast_header(n), out, int_cols);
  say(quiet, "wrote " + std::to_string(out.rows()) + " forecast rows to " + out_csv);
}

}  // namespace

int cmd_gen(const std::string& config_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed_override, bool quiet) {
  return guarded([&] { run_gen(config_path, out_dir, seed_override, quiet); });
}

int cmd_fit_hmm(const std::string& config_path, const std::string& data_dir,
                const std::string& out_dir, std::optional<std::uint64_t> seed_override,
                bool quiet) {
  return guarded([&] { run_fit_hmm(config_path, data_dir, out_dir, seed_override, quiet); });
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, std::optional<std::uint64_t> seed_override, bool quiet) {
  return guarded([&] { run_train(config_path, data_dir, out_dir, seed_override, quiet); });
}

int cmd_eval(const std::string& run_dir, bool quiet) {
  return guarded([&] { run_eval(run_dir, quiet); });
}

int cmd_forecast(const std::string& run_dir, const std::string& input_csv,
                 const std::string& out_csv, bool quiet) {
  return guarded([&] { run_forecast(run_dir, input_csv, out_csv, quiet); });
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"nonstationary latent-state forecaster"};
  app.require_subcommand(1);

  std::string config, data, out, run_dir, out_csv;
  std::optional<std::uint64_t> seed;
  bool quiet = false;

  CLI::App* c_gen = app.add_subcommand("gen", "generate a synthetic dataset");
  c_gen->add_option("--config", config, "run config file")->required();
  c_gen->add_option("--out", out, "output dataset directory")->required();
  c_gen->add_option("--seed", seed, "override the config seed");
  c_gen->add_flag("--quiet", quiet, "suppress progress output");

  CLI::App* c_fit = app.add_subcommand("fit-hmm", "fit the switching AR environment model");
  c_fit->add_option("--config", config, "run config file")->required();
  c_fit->add_option("--data", data, "dataset directory")->required();
  c_fit->add_option("--out", out, "run directory")->required();
  c_fit->add_option("--seed", seed, "override the config seed");
  c_fit->add_flag("--quiet", quiet, "suppress progress output");

  CLI::App* c_train = app.add_subcommand("train", "train the latent-variable forecaster");
  c_train->add_option("--config", config, "run config file")->required();
  c_train->add_option("--data", data, "dataset directory")->required();
  c_train->add_option("--out", out, "run directory holding arhmm.json")->required();
  c_train->add_option("--seed", seed, "override the config seed");
  c_train->add_flag("--quiet", quiet, "suppress progress output");

  CLI::App* c_eval = app.add_subcommand("eval", "score a run directory");
  c_eval->add_option("run_dir", run_dir, "run directory to score")->required();
  c_eval->add_flag("--quiet", quiet, "suppress progress output");

  CLI::App* c_fc = app.add_subcommand("forecast", "forecast a CSV series with a stored run");
  c_fc->add_option("run_dir", run_dir, "run directory with stored models")->required();
  c_fc->add_option("--data", data, "input CSV series")->required();
  c_fc->add_option("--out", out_csv, "output CSV path")->required();
  c_fc->add_flag("--quiet", quiet, "suppress progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (c_gen->parsed()) return cmd_gen(config, out, seed, quiet);
  if (c_fit->parsed()) return cmd_fit_hmm(config, data, out, seed, quiet);
  if (c_train->parsed()) return cmd_train(config, data, out, seed, quiet);
  if (c_eval->parsed()) return cmd_eval(run_dir, quiet);
  if (c_fc->parsed()) return cmd_forecast(run_dir, data, out_csv, quiet);
  return kExitUsage;
}

}  // namespace idea::pipeline
