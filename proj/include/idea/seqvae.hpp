#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "idea/config.hpp"
#include "idea/gen.hpp"
#include "idea/hmm.hpp"
#include "idea/rng.hpp"
#include "idea/substrate.hpp"

namespace idea::seqvae {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using substrate::Graph;
using substrate::Mlp;
using substrate::ParamVector;
using substrate::Value;

// Fixed observation noise for the decoder likelihoods.
constexpr double kObsLogvar = -4.6051701859880913680;  // log(0.01)
// Additive floor under every prior scale.
constexpr double kPriorSigmaFloor = 1e-4;
// Posterior log variances are squashed to (-kLogvarBound, kLogvarBound).
constexpr double kLogvarBound = 5.0;

struct ModelDims {
  int n_s = 4;
  int n_e = 4;
  int env_count = 3;
  int window = 24;
  int t_split = 16;
  int prior_lag = 1;
  int hidden = 128;
  int prior_hidden = 32;
  double alpha = 1.0;
  double beta = 0.02;
  double gamma = 0.02;

  int n() const { return n_s + n_e; }
  int horizon() const { return window - t_split; }
  void validate() const;
};

// Latent-variable forecaster. enc_s / enc_e read the flattened history
// window (step-major) and emit mean/raw-logvar pairs for every history
// step; pred_s / pred_e map sampled history latents to the future steps the
// same way; dec_hist / dec_fut are per-step maps from [z_s_t, z_e_t] back
// to standardized observations. prior_s holds one context net per
// stationary dimension over the previous prior_lag latent vectors; prior_e
// holds one per nonstationary dimension over a one-hot environment label.
// Each prior net emits (mu, raw) with sigma = 1e-4 + softplus(raw).
//
// The Mlp members are the single source of truth for parameters;
// pack_params/set_params convert to and from the flat vector the optimizer
// and the autodiff graph use. Zero-horizon models (window == t_split) own
// no predictor or future-decoder nets.
struct IdeaModel {
  ModelDims dims;
  VectorXd x_mean, x_std;  // per-dimension standardization, x_std >= 1e-8
  Mlp enc_s, enc_e;
  Mlp pred_s, pred_e;
  Mlp dec_hist, dec_fut;
  std::vector<Mlp> prior_s;
  std::vector<Mlp> prior_e;

  void validate() const;
};

IdeaModel init_model(const ModelDims& dims, std::uint64_t seed);

substrate::ParamIndex param_index(const IdeaModel& model);
ParamVector pack_params(const IdeaModel& model);
void set_params(IdeaModel& model, const VectorXd& values);

// Per-segment reparameterization noise. Zero noise turns every sample into
// the posterior mean.
struct NoiseBundle {
  VectorXd s_hist, e_hist;  // t_split * n_s, t_split * n_e
  VectorXd s_fut, e_fut;    // horizon * n_s, horizon * n_e

  static NoiseBundle zero(const ModelDims& dims);
  static NoiseBundle draw(const ModelDims& dims, Rng& rng);
};

struct Encoded {
  VectorXd mean_s, logvar_s, z_s;  // t_split * n_s, step-major
  VectorXd mean_e, logvar_e, z_e;  // t_split * n_e
};

// Standardizes internally; x_hist is raw with t_split rows.
Encoded encode(const IdeaModel& model, const MatrixXd& x_hist, const VectorXd& noise_s,
               const VectorXd& noise_e);

struct PredictedLatents {
  VectorXd mean_s, logvar_s, z_s;  // horizon * n_s
  VectorXd mean_e, logvar_e, z_e;  // horizon * n_e
};

PredictedLatents predict_latents(const IdeaModel& model, const VectorXd& z_s_hist,
                                 const VectorXd& z_e_hist, const VectorXd& noise_s,
                                 const VectorXd& noise_e);

// Per-row application of the corresponding decoder; z rows are [z_s, z_e]
// per step and outputs stay in standardized coordinates.
MatrixXd decode(const IdeaModel& model, const MatrixXd& z);
MatrixXd forecast_decode(const IdeaModel& model, const MatrixXd& z);

// Score of a stationary latent trajectory (rows = steps) under the learned
// conditional-affine prior: the first prior_lag steps under N(0, I), then
// per dimension log N((z - mu(history)) / sigma; 0, 1) - log sigma.
double stationary_prior_logp(const IdeaModel& model, const MatrixXd& z_s);

// Same change-of-variables score with the one-hot environment as context.
double nonstationary_prior_logp(const IdeaModel& model, const MatrixXd& z_e,
                                const std::vector<int>& env);

struct ElboBreakdown {
  double rec = 0.0;    // history reconstruction likelihood
  double pre = 0.0;    // future prediction likelihood
  double kld_s = 0.0;  // single-sample KL for the stationary block
  double kld_e = 0.0;  // single-sample KL for the nonstationary block
  double total = 0.0;  // pre + alpha*rec - beta*kld_s - gamma*kld_e, left to right
};

// Builds the negative-ELBO graph over g's parameter vector and returns the
// scalar root. Side outputs, when requested: the term values and the sum of
// squared standardized reconstruction errors over the history segment.
Value build_neg_elbo(Graph& g, const IdeaModel& model, const MatrixXd& x_window,
                     const std::vector<int>& env, const NoiseBundle& noise,
                     ElboBreakdown* breakdown = nullptr, double* recon_sse = nullptr);

// Environment labels come from a frozen Viterbi decode of the window.
ElboBreakdown elbo(const IdeaModel& model, const hmm::Arhmm& env_model, const MatrixXd& x_window,
                   const NoiseBundle& noise);
ElboBreakdown elbo_with_labels(const IdeaModel& model, const MatrixXd& x_window,
                               const std::vector<int>& env, const NoiseBundle& noise);

struct TraceRow {
  int epoch = 0;
  double rec = 0.0, pre = 0.0, kld_s = 0.0, kld_e = 0.0, total = 0.0;
  double recon_mse = 0.0;
};

struct TrainResult {
  hmm::Arhmm env_model;
  IdeaModel model;
  std::vector<TraceRow> trace;
};

// Overlapping training windows, step stride apart; the tail that does not
// fill a window is dropped.
std::vector<MatrixXd> extract_windows(const MatrixXd& x, int window, int stride);

ModelDims dims_from_config(const RunConfig& cfg);

// Phase 2 only: Adam ascent on the ELBO against a frozen environment model.
// Labels follow cfg.train.env_labels ("viterbi" or "random").
IdeaModel train_phase2(const gen::Dataset& train, const hmm::Arhmm& env_model,
                       const RunConfig& cfg, std::vector<TraceRow>* trace);

// Phase 1 (Baum-Welch on the training windows) followed by phase 2.
TrainResult train_two_phase(const gen::Dataset& train, const RunConfig& cfg);

struct ForecastResult {
  MatrixXd xhat;           // horizon x n, raw coordinates
  std::vector<int> e_hat;  // argmax environment continuation
};

// Posterior-mean rollout: encode with zero noise, predict latents with zero
// noise, decode the future, undo standardization.
ForecastResult forecast(const IdeaModel& model, const hmm::Arhmm& env_model,
                        const MatrixXd& x_hist, int horizon);

void save_model(const std::string& path, const IdeaModel& model, std::uint64_t seed);
IdeaModel load_model(const std::string& path);

}  // namespace idea::seqvae
