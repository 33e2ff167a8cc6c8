#include "idea/seqvae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "idea/common.hpp"
#include "idea/jsonio.hpp"

namespace idea::seqvae {
namespace {

using substrate::Act;
using substrate::AdamState;
using substrate::ParamIndex;
using substrate::mlp_apply;

// Mirrors the graph's softplus so eager prior scores agree bit for bit.
double softplus_stable(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

VectorXd bounded_logvar(const VectorXd& raw) {
  return ((raw.array() * (1.0 / kLogvarBound)).tanh() * kLogvarBound).matrix();
}

double prior_sigma(double raw) { return kPriorSigmaFloor + softplus_stable(raw); }

MatrixXd standardize(const IdeaModel& model, const MatrixXd& x) {
  return ((x.rowwise() - model.x_mean.transpose()).array().rowwise() /
          model.x_std.transpose().array())
      .matrix();
}

// Step-major flattening: [x_1, x_2, ...], each row n wide.
VectorXd flatten_steps(const MatrixXd& x) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  VectorXd out(rows * cols);
  for (Eigen::Index t = 0; t < rows; ++t) out.segment(t * cols, cols) = x.row(t).transpose();
  return out;
}

void check_net(const Mlp& net, Eigen::Index in, Eigen::Index out, const char* name) {
  net.validate();
  if (net.in_dim() != in || net.out_dim() != out)
    throw ContractViolation(std::string(name) + " has the wrong input or output width");
  for (const substrate::Layer& l : net.layers)
    if (!l.W.allFinite() || !l.b.allFinite())
      throw ContractViolation(std::string(name) + " has non-finite parameters");
}

void check_env_labels(const std::vector<int>& env, std::size_t len, int E) {
  if (env.size() != len) throw ContractViolation("environment label count mismatch");
  for (int e : env)
    if (e < 0 || e >= E) throw ContractViolation("environment label out of range");
}

VectorXd env_onehot(const std::vector<int>& env, int E) {
  VectorXd oh = VectorXd::Zero(static_cast<Eigen::Index>(env.size()) * E);
  for (std::size_t t = 0; t < env.size(); ++t) oh(static_cast<Eigen::Index>(t) * E + env[t]) = 1.0;
  return oh;
}

// Interleaves per-step stationary and nonstationary latents into
// [z_s_t, z_e_t] blocks.
Value interleave_steps(Graph& g, Value z_s, Value z_e, int steps, int n_s, int n_e) {
  std::vector<Value> parts;
  parts.reserve(2 * steps);
  for (int t = 0; t < steps; ++t) {
    parts.push_back(g.slice(z_s, static_cast<Eigen::Index>(t) * n_s, n_s));
    parts.push_back(g.slice(z_e, static_cast<Eigen::Index>(t) * n_e, n_e));
  }
  return g.concat(parts);
}

// Change-of-variables score of one latent block under its per-dimension
// context nets: sum_i [ logN(eps_i; 0, 1) - sum log sigma_i ].
Value prior_block_logp(Graph& g, const std::string& prefix, const std::vector<Mlp>& nets,
                       Value ctx, Value z_full, Eigen::Index z_offset, Eigen::Index z_stride,
                       Eigen::Index count, int blocks) {
  Value total = g.constant(VectorXd::Zero(1));
  for (std::size_t i = 0; i < nets.size(); ++i) {
    Value out = graph_mlp(g, prefix + "." + std::to_string(i), nets[i], ctx, blocks);
    Value mu = g.gather_stride(out, 0, 2, count);
    Value raw = g.gather_stride(out, 1, 2, count);
    Value sigma = g.offset(g.softplus(raw), kPriorSigmaFloor);
    Value zi = g.gather_stride(z_full, z_offset + static_cast<Eigen::Index>(i), z_stride, count);
    Value eps = g.div(g.sub(zi, mu), sigma);
    Value lp = g.sub(g.gaussian_logpdf(eps, g.zeros(count), g.zeros(count)),
                     g.sum(g.log(sigma)));
    total = g.add(total, lp);
  }
  return total;
}

struct PosteriorNodes {
  Value mean, logvar, z, logq;
};

PosteriorNodes posterior_from_head(Graph& g, Value head_out, Eigen::Index width,
                                   const VectorXd& noise) {
  PosteriorNodes p;
  p.mean = g.slice(head_out, 0, width);
  Value raw = g.slice(head_out, width, width);
  p.logvar = g.scale(g.tanh(g.scale(raw, 1.0 / kLogvarBound)), kLogvarBound);
  p.z = g.reparam(p.mean, p.logvar, noise);
  p.logq = g.gaussian_logpdf(p.z, p.mean, p.logvar);
  return p;
}

void require_finite_term(const Graph& g, Value v, const char* term) {
  if (!std::isfinite(g.value(v))) throw NumericError(term);
}

}  // namespace

void ModelDims::validate() const {
  if (n_s < 1 || n_e < 1) throw ContractViolation("latent widths must be at least 1");
  if (env_count < 2) throw ContractViolation("environment count must be at least 2");
  if (t_split < 1 || window < t_split)
    throw ContractViolation("window must be at least t_split and both positive");
  if (prior_lag < 1 || prior_lag >= window)
    throw ContractViolation("prior_lag must be in [1, window)");
  if (hidden < 1 || prior_hidden < 1) throw ContractViolation("hidden widths must be positive");
  if (!(alpha > 0.0) || !(beta > 0.0) || !(gamma > 0.0))
    throw ContractViolation("elbo weights must be positive");
}

void IdeaModel::validate() const {
  dims.validate();
  const int n = dims.n();
  const int ts = dims.t_split;
  const int h = dims.horizon();
  if (x_mean.size() != n || x_std.size() != n)
    throw ContractViolation("standardization vectors must have length n");
  if (!x_mean.allFinite() || !x_std.allFinite() || x_std.minCoeff() <= 0.0)
    throw ContractViolation("standardization parameters must be finite and positive");
  check_net(enc_s, static_cast<Eigen::Index>(ts) * n, 2L * ts * dims.n_s, "enc_s");
  check_net(enc_e, static_cast<Eigen::Index>(ts) * n, 2L * ts * dims.n_e, "enc_e");
  check_net(dec_hist, n, n, "dec_hist");
  if (h > 0) {
    check_net(pred_s, static_cast<Eigen::Index>(ts) * dims.n_s, 2L * h * dims.n_s, "pred_s");
    check_net(pred_e, static_cast<Eigen::Index>(ts) * dims.n_e, 2L * h * dims.n_e, "pred_e");
    check_net(dec_fut, n, n, "dec_fut");
  }
  if (static_cast<int>(prior_s.size()) != dims.n_s ||
      static_cast<int>(prior_e.size()) != dims.n_e)
    throw ContractViolation("one prior net per latent dimension is required");
  for (const Mlp& net : prior_s)
    check_net(net, static_cast<Eigen::Index>(dims.n_s) * dims.prior_lag, 2, "prior_s component");
  for (const Mlp& net : prior_e) check_net(net, dims.env_count, 2, "prior_e component");
}

IdeaModel init_model(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  Rng rng(seed);
  const int n = dims.n();
  const int ts = dims.t_split;
  const int h = dims.horizon();
  const double slope = 0.2;
  IdeaModel m;
  m.dims = dims;
  m.x_mean = VectorXd::Zero(n);
  m.x_std = VectorXd::Ones(n);
  m.enc_s = substrate::make_mlp({ts * n, dims.hidden, dims.hidden, 2 * ts * dims.n_s}, slope, rng,
                                0.1);
  m.enc_e = substrate::make_mlp({ts * n, dims.hidden, dims.hidden, 2 * ts * dims.n_e}, slope, rng,
                                0.1);
  if (h > 0) {
    m.pred_s = substrate::make_mlp({ts * dims.n_s, dims.hidden, dims.hidden, 2 * h * dims.n_s},
                                   slope, rng, 0.1);
    m.pred_e = substrate::make_mlp({ts * dims.n_e, dims.hidden, dims.hidden, 2 * h * dims.n_e},
                                   slope, rng, 0.1);
  }
  m.dec_hist = substrate::make_mlp({n, dims.hidden, n}, slope, rng, 1.0);
  if (h > 0) m.dec_fut = substrate::make_mlp({n, dims.hidden, n}, slope, rng, 1.0);
  for (int i = 0; i < dims.n_s; ++i)
    m.prior_s.push_back(
        substrate::make_mlp({dims.n_s * dims.prior_lag, dims.prior_hidden, 2}, slope, rng, 0.1));
  for (int j = 0; j < dims.n_e; ++j)
    m.prior_e.push_back(substrate::make_mlp({dims.env_count, 2}, slope, rng, 0.1));
  m.validate();
  return m;
}

ParamIndex param_index(const IdeaModel& model) {
  ParamIndex idx;
  substrate::register_mlp(idx, "enc_s", model.enc_s);
  substrate::register_mlp(idx, "enc_e", model.enc_e);
  const bool fut = model.dims.horizon() > 0;
  if (fut) {
    substrate::register_mlp(idx, "pred_s", model.pred_s);
    substrate::register_mlp(idx, "pred_e", model.pred_e);
  }
  substrate::register_mlp(idx, "dec_hist", model.dec_hist);
  if (fut) substrate::register_mlp(idx, "dec_fut", model.dec_fut);
  for (std::size_t i = 0; i < model.prior_s.size(); ++i)
    substrate::register_mlp(idx, "prior_s." + std::to_string(i), model.prior_s[i]);
  for (std::size_t j = 0; j < model.prior_e.size(); ++j)
    substrate::register_mlp(idx, "prior_e." + std::to_string(j), model.prior_e[j]);
  return idx;
}

ParamVector pack_params(const IdeaModel& model) {
  ParamVector pv(param_index(model));
  substrate::pack_mlp(pv.index, "enc_s", model.enc_s, pv.values);
  substrate::pack_mlp(pv.index, "enc_e", model.enc_e, pv.values);
  const bool fut = model.dims.horizon() > 0;
  if (fut) {
    substrate::pack_mlp(pv.index, "pred_s", model.pred_s, pv.values);
    substrate::pack_mlp(pv.index, "pred_e", model.pred_e, pv.values);
  }
  substrate::pack_mlp(pv.index, "dec_hist", model.dec_hist, pv.values);
  if (fut) substrate::pack_mlp(pv.index, "dec_fut", model.dec_fut, pv.values);
  for (std::size_t i = 0; i < model.prior_s.size(); ++i)
    substrate::pack_mlp(pv.index, "prior_s." + std::to_string(i), model.prior_s[i], pv.values);
  for (std::size_t j = 0; j < model.prior_e.size(); ++j)
    substrate::pack_mlp(pv.index, "prior_e." + std::to_string(j), model.prior_e[j], pv.values);
  return pv;
}

void set_params(IdeaModel& model, const VectorXd& values) {
  ParamIndex idx = param_index(model);
  if (values.size() != idx.total())
    throw ContractViolation("parameter vector length does not match the model");
  substrate::unpack_mlp(idx, "enc_s", model.enc_s, values);
  substrate::unpack_mlp(idx, "enc_e", model.enc_e, values);
  const bool fut = model.dims.horizon() > 0;
  if (fut) {
    substrate::unpack_mlp(idx, "pred_s", model.pred_s, values);
    substrate::unpack_mlp(idx, "pred_e", model.pred_e, values);
  }
  substrate::unpack_mlp(idx, "dec_hist", model.dec_hist, values);
  if (fut) substrate::unpack_mlp(idx, "dec_fut", model.dec_fut, values);
  for (std::size_t i = 0; i < model.prior_s.size(); ++i)
    substrate::unpack_mlp(idx, "prior_s." + std::to_string(i), model.prior_s[i], values);
  for (std::size_t j = 0; j < model.prior_e.size(); ++j)
    substrate::unpack_mlp(idx, "prior_e." + std::to_string(j), model.prior_e[j], values);
}

NoiseBundle NoiseBundle::zero(const ModelDims& dims) {
  NoiseBundle nb;
  nb.s_hist = VectorXd::Zero(static_cast<Eigen::Index>(dims.t_split) * dims.n_s);
  nb.e_hist = VectorXd::Zero(static_cast<Eigen::Index>(dims.t_split) * dims.n_e);
  nb.s_fut = VectorXd::Zero(static_cast<Eigen::Index>(dims.horizon()) * dims.n_s);
  nb.e_fut = VectorXd::Zero(static_cast<Eigen::Index>(dims.horizon()) * dims.n_e);
  return nb;
}

namespace {

VectorXd draw_normals(Rng& rng, int n) {
  std::vector<double> v = rng.normal_vec(n);
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

NoiseBundle NoiseBundle::draw(const ModelDims& dims, Rng& rng) {
  NoiseBundle nb;
  nb.s_hist = draw_normals(rng, dims.t_split * dims.n_s);
  nb.e_hist = draw_normals(rng, dims.t_split * dims.n_e);
  nb.s_fut = draw_normals(rng, dims.horizon() * dims.n_s);
  nb.e_fut = draw_normals(rng, dims.horizon() * dims.n_e);
  return nb;
}

Encoded encode(const IdeaModel& model, const MatrixXd& x_hist, const VectorXd& noise_s,
               const VectorXd& noise_e) {
  const ModelDims& d = model.dims;
  if (x_hist.rows() != d.t_split || x_hist.cols() != d.n())
    throw ContractViolation("encode expects a t_split x n history window");
  if (noise_s.size() != static_cast<Eigen::Index>(d.t_split) * d.n_s ||
      noise_e.size() != static_cast<Eigen::Index>(d.t_split) * d.n_e)
    throw ContractViolation("encode noise has the wrong length");
  VectorXd xh = flatten_steps(standardize(model, x_hist));
  Encoded out;
  VectorXd raw_s = mlp_apply(model.enc_s, xh);
  out.mean_s = raw_s.head(d.t_split * d.n_s);
  out.logvar_s = bounded_logvar(raw_s.tail(d.t_split * d.n_s));
  out.z_s = substrate::reparam_sample(out.mean_s, out.logvar_s, noise_s);
  VectorXd raw_e = mlp_apply(model.enc_e, xh);
  out.mean_e = raw_e.head(d.t_split * d.n_e);
  out.logvar_e = bounded_logvar(raw_e.tail(d.t_split * d.n_e));
  out.z_e = substrate::reparam_sample(out.mean_e, out.logvar_e, noise_e);
  return out;
}

PredictedLatents predict_latents(const IdeaModel& model, const VectorXd& z_s_hist,
                                 const VectorXd& z_e_hist, const VectorXd& noise_s,
                                 const VectorXd& noise_e) {
  const ModelDims& d = model.dims;
  const int h = d.horizon();
  if (h < 1) throw ContractViolation("model has no forecast horizon");
  if (z_s_hist.size() != static_cast<Eigen::Index>(d.t_split) * d.n_s ||
      z_e_hist.size() != static_cast<Eigen::Index>(d.t_split) * d.n_e)
    throw ContractViolation("history latents have the wrong length");
  if (noise_s.size() != static_cast<Eigen::Index>(h) * d.n_s ||
      noise_e.size() != static_cast<Eigen::Index>(h) * d.n_e)
    throw ContractViolation("prediction noise has the wrong length");
  PredictedLatents out;
  VectorXd raw_s = mlp_apply(model.pred_s, z_s_hist);
  out.mean_s = raw_s.head(static_cast<Eigen::Index>(h) * d.n_s);
  out.logvar_s = bounded_logvar(raw_s.tail(static_cast<Eigen::Index>(h) * d.n_s));
  out.z_s = substrate::reparam_sample(out.mean_s, out.logvar_s, noise_s);
  VectorXd raw_e = mlp_apply(model.pred_e, z_e_hist);
  out.mean_e = raw_e.head(static_cast<Eigen::Index>(h) * d.n_e);
  out.logvar_e = bounded_logvar(raw_e.tail(static_cast<Eigen::Index>(h) * d.n_e));
  out.z_e = substrate::reparam_sample(out.mean_e, out.logvar_e, noise_e);
  return out;
}

namespace {

MatrixXd decode_with(const Mlp& net, const MatrixXd& z, int n) {
  if (z.cols() != n) throw ContractViolation("latent rows must have width n_s + n_e");
  MatrixXd out(z.rows(), n);
  for (Eigen::Index r = 0; r < z.rows(); ++r)
    out.row(r) = mlp_apply(net, z.row(r).transpose()).transpose();
  return out;
}

}  // namespace

MatrixXd decode(const IdeaModel& model, const MatrixXd& z) {
  return decode_with(model.dec_hist, z, model.dims.n());
}

MatrixXd forecast_decode(const IdeaModel& model, const MatrixXd& z) {
  if (model.dims.horizon() < 1) throw ContractViolation("model has no forecast horizon");
  return decode_with(model.dec_fut, z, model.dims.n());
}

double stationary_prior_logp(const IdeaModel& model, const MatrixXd& z_s) {
  const ModelDims& d = model.dims;
  if (z_s.cols() != d.n_s) throw ContractViolation("trajectory width must be n_s");
  if (z_s.rows() < d.prior_lag + 1)
    throw ContractViolation("trajectory must be longer than prior_lag");
  double lp = 0.0;
  for (int t = 0; t < d.prior_lag; ++t)
    for (int i = 0; i < d.n_s; ++i) lp += substrate::gaussian_logpdf(z_s(t, i), 0.0, 0.0);
  VectorXd ctx(static_cast<Eigen::Index>(d.prior_lag) * d.n_s);
  for (Eigen::Index t = d.prior_lag; t < z_s.rows(); ++t) {
    for (int k = 0; k < d.prior_lag; ++k)
      ctx.segment(static_cast<Eigen::Index>(k) * d.n_s, d.n_s) =
          z_s.row(t - d.prior_lag + k).transpose();
    for (int i = 0; i < d.n_s; ++i) {
      VectorXd head = mlp_apply(model.prior_s[i], ctx);
      double sigma = prior_sigma(head(1));
      double eps = (z_s(t, i) - head(0)) / sigma;
      lp += substrate::gaussian_logpdf(eps, 0.0, 0.0) - std::log(sigma);
    }
  }
  return lp;
}

double nonstationary_prior_logp(const IdeaModel& model, const MatrixXd& z_e,
                                const std::vector<int>& env) {
  const ModelDims& d = model.dims;
  if (z_e.cols() != d.n_e) throw ContractViolation("trajectory width must be n_e");
  check_env_labels(env, static_cast<std::size_t>(z_e.rows()), d.env_count);
  double lp = 0.0;
  for (Eigen::Index t = 0; t < z_e.rows(); ++t) {
    VectorXd oh = VectorXd::Zero(d.env_count);
    oh(env[t]) = 1.0;
    for (int j = 0; j < d.n_e; ++j) {
      VectorXd head = mlp_apply(model.prior_e[j], oh);
      double sigma = prior_sigma(head(1));
      double eps = (z_e(t, j) - head(0)) / sigma;
      lp += substrate::gaussian_logpdf(eps, 0.0, 0.0) - std::log(sigma);
    }
  }
  return lp;
}

Value build_neg_elbo(Graph& g, const IdeaModel& model, const MatrixXd& x_window,
                     const std::vector<int>& env, const NoiseBundle& noise,
                     ElboBreakdown* breakdown, double* recon_sse) {
  const ModelDims& d = model.dims;
  const int n = d.n();
  const int ts = d.t_split;
  const int h = d.horizon();
  if (x_window.rows() != d.window || x_window.cols() != n)
    throw ContractViolation("elbo expects a window x n observation block");
  check_env_labels(env, static_cast<std::size_t>(d.window), d.env_count);
  if (noise.s_hist.size() != static_cast<Eigen::Index>(ts) * d.n_s ||
      noise.e_hist.size() != static_cast<Eigen::Index>(ts) * d.n_e ||
      noise.s_fut.size() != static_cast<Eigen::Index>(h) * d.n_s ||
      noise.e_fut.size() != static_cast<Eigen::Index>(h) * d.n_e)
    throw ContractViolation("noise bundle has the wrong lengths");

  MatrixXd xs = standardize(model, x_window);
  VectorXd xh_flat = flatten_steps(xs.topRows(ts));
  Value x_hist = g.constant(xh_flat, "x_hist");

  Value enc_s_out = graph_mlp(g, "enc_s", model.enc_s, x_hist);
  PosteriorNodes qs = posterior_from_head(g, enc_s_out, static_cast<Eigen::Index>(ts) * d.n_s,
                                          noise.s_hist);
  Value enc_e_out = graph_mlp(g, "enc_e", model.enc_e, x_hist);
  PosteriorNodes qe = posterior_from_head(g, enc_e_out, static_cast<Eigen::Index>(ts) * d.n_e,
                                          noise.e_hist);

  Value logq_s = qs.logq;
  Value logq_e = qe.logq;
  Value z_s_full = qs.z;
  Value z_e_full = qe.z;
  Value pre;
  if (h > 0) {
    Value ps_out = graph_mlp(g, "pred_s", model.pred_s, qs.z);
    PosteriorNodes fs = posterior_from_head(g, ps_out, static_cast<Eigen::Index>(h) * d.n_s,
                                            noise.s_fut);
    Value pe_out = graph_mlp(g, "pred_e", model.pred_e, qe.z);
    PosteriorNodes fe = posterior_from_head(g, pe_out, static_cast<Eigen::Index>(h) * d.n_e,
                                            noise.e_fut);
    logq_s = g.add(logq_s, fs.logq);
    logq_e = g.add(logq_e, fe.logq);
    z_s_full = g.concat({qs.z, fs.z});
    z_e_full = g.concat({qe.z, fe.z});

    Value zf = interleave_steps(g, fs.z, fe.z, h, d.n_s, d.n_e);
    Value xhat_f = graph_mlp(g, "dec_fut", model.dec_fut, zf, h);
    Value x_fut = g.constant(flatten_steps(xs.bottomRows(h)), "x_fut");
    pre = g.gaussian_logpdf(x_fut, xhat_f,
                            g.constant(VectorXd::Constant(static_cast<Eigen::Index>(h) * n,
                                                          kObsLogvar)));
  } else {
    pre = g.constant(VectorXd::Zero(1));
  }
  g.set_label(pre, "pre");

  Value zh = interleave_steps(g, qs.z, qe.z, ts, d.n_s, d.n_e);
  Value xhat_h = graph_mlp(g, "dec_hist", model.dec_hist, zh, ts);
  Value rec = g.gaussian_logpdf(x_hist, xhat_h,
                                g.constant(VectorXd::Constant(static_cast<Eigen::Index>(ts) * n,
                                                              kObsLogvar)));
  g.set_label(rec, "rec");

  const Eigen::Index cnt = d.window - d.prior_lag;
  Value ctx = g.window_stack(z_s_full, 0, static_cast<Eigen::Index>(d.prior_lag) * d.n_s, d.n_s,
                             cnt);
  Value head_len = g.slice(z_s_full, 0, static_cast<Eigen::Index>(d.prior_lag) * d.n_s);
  Value prior_s_lp = g.add(
      g.gaussian_logpdf(head_len, g.zeros(static_cast<Eigen::Index>(d.prior_lag) * d.n_s),
                        g.zeros(static_cast<Eigen::Index>(d.prior_lag) * d.n_s)),
      prior_block_logp(g, "prior_s", model.prior_s, ctx, z_s_full,
                       static_cast<Eigen::Index>(d.prior_lag) * d.n_s, d.n_s, cnt,
                       static_cast<int>(cnt)));
  Value kld_s = g.sub(logq_s, prior_s_lp);
  g.set_label(kld_s, "kld_s");

  Value onehot = g.constant(env_onehot(env, d.env_count), "env_onehot");
  Value prior_e_lp = prior_block_logp(g, "prior_e", model.prior_e, onehot, z_e_full, 0, d.n_e,
                                      d.window, d.window);
  Value kld_e = g.sub(logq_e, prior_e_lp);
  g.set_label(kld_e, "kld_e");

  Value total = g.sub(g.sub(g.add(pre, g.scale(rec, d.alpha)), g.scale(kld_s, d.beta)),
                      g.scale(kld_e, d.gamma));
  g.set_label(total, "elbo_total");

  require_finite_term(g, rec, "rec");
  require_finite_term(g, pre, "pre");
  require_finite_term(g, kld_s, "kld_s");
  require_finite_term(g, kld_e, "kld_e");
  if (breakdown) {
    breakdown->rec = g.value(rec);
    breakdown->pre = g.value(pre);
    breakdown->kld_s = g.value(kld_s);
    breakdown->kld_e = g.value(kld_e);
    breakdown->total = g.value(total);
  }
  if (recon_sse) *recon_sse = (g.vec(xhat_h) - xh_flat).squaredNorm();
  return g.scale(total, -1.0);
}

ElboBreakdown elbo_with_labels(const IdeaModel& model, const MatrixXd& x_window,
                               const std::vector<int>& env, const NoiseBundle& noise) {
  model.validate();
  ParamVector pv = pack_params(model);
  Graph g(pv);
  ElboBreakdown bd;
  build_neg_elbo(g, model, x_window, env, noise, &bd);
  return bd;
}

ElboBreakdown elbo(const IdeaModel& model, const hmm::Arhmm& env_model, const MatrixXd& x_window,
                   const NoiseBundle& noise) {
  return elbo_with_labels(model, x_window, hmm::viterbi(env_model, x_window), noise);
}

std::vector<MatrixXd> extract_windows(const MatrixXd& x, int window, int stride) {
  if (window < 2 || stride < 1) throw ContractViolation("window must be >= 2 and stride >= 1");
  if (x.rows() < window) throw ContractViolation("series is shorter than one window");
  std::vector<MatrixXd> out;
  for (Eigen::Index start = 0; start + window <= x.rows(); start += stride)
    out.push_back(x.middleRows(start, window));
  return out;
}

ModelDims dims_from_config(const RunConfig& cfg) {
  ModelDims d;
  d.n_s = cfg.gen.n_s;
  d.n_e = cfg.gen.n_e;
  d.env_count = cfg.gen.env_count;
  d.window = cfg.gen.window;
  d.t_split = cfg.gen.t_split;
  d.prior_lag = cfg.train.prior_lag;
  d.hidden = cfg.train.hidden;
  d.prior_hidden = cfg.train.prior_hidden;
  d.alpha = cfg.train.alpha;
  d.beta = cfg.train.beta;
  d.gamma = cfg.train.gamma;
  return d;
}

IdeaModel train_phase2(const gen::Dataset& train, const hmm::Arhmm& env_model,
                       const RunConfig& cfg, std::vector<TraceRow>* trace) {
  cfg.validate();
  if (cfg.train.env_labels != "viterbi" && cfg.train.env_labels != "random")
    throw ContractViolation("env_labels must be 'viterbi' or 'random'");
  ModelDims dims = dims_from_config(cfg);
  IdeaModel model = init_model(dims, mix_seed(cfg.seed, 201));
  const int n = dims.n();
  if (train.x.cols() != n) throw ContractViolation("training data width does not match dims");

  model.x_mean = train.x.colwise().mean().transpose();
  VectorXd var = (train.x.rowwise() - model.x_mean.transpose())
                     .array()
                     .square()
                     .colwise()
                     .mean()
                     .matrix()
                     .transpose();
  model.x_std = var.array().sqrt().max(1e-8).matrix();

  std::vector<MatrixXd> windows = extract_windows(train.x, dims.window, cfg.gen.stride);
  const std::size_t W = windows.size();
  std::vector<std::vector<int>> labels(W);
  if (cfg.train.env_labels == "viterbi") {
    env_model.validate();
    if (env_model.E != dims.env_count)
      throw ContractViolation("environment model state count does not match dims");
    for (std::size_t w = 0; w < W; ++w) labels[w] = hmm::viterbi(env_model, windows[w]);
  } else {
    Rng lrng(mix_seed(cfg.seed, 202));
    for (std::size_t w = 0; w < W; ++w) {
      labels[w].resize(dims.window);
      for (int& e : labels[w]) e = lrng.uniform_int(dims.env_count);
    }
  }

  ParamVector pv = pack_params(model);
  AdamState adam(pv.values.size(), cfg.train.lr);
  Rng noise_rng(mix_seed(cfg.seed, 203));
  Rng shuffle_rng(mix_seed(cfg.seed, 204));
  std::vector<std::size_t> order(W);
  std::iota(order.begin(), order.end(), 0);

  const double denom = static_cast<double>(W);
  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    for (std::size_t i = W - 1; i > 0; --i)
      std::swap(order[i],
                order[static_cast<std::size_t>(shuffle_rng.uniform_int(static_cast<int>(i + 1)))]);
    TraceRow row;
    row.epoch = epoch;
    double sse_sum = 0.0;
    std::size_t at = 0;
    while (at < W) {
      const std::size_t start = at;
      const std::size_t stop = std::min(W, at + static_cast<std::size_t>(cfg.train.batch));
      VectorXd grad_sum = VectorXd::Zero(pv.values.size());
      for (; at < stop; ++at) {
        const std::size_t w = order[at];
        NoiseBundle noise = NoiseBundle::draw(dims, noise_rng);
        ElboBreakdown bd;
        double sse = 0.0;
        substrate::LossGrad lg = substrate::loss_grad(pv, [&](Graph& g) {
          return build_neg_elbo(g, model, windows[w], labels[w], noise, &bd, &sse);
        });
        grad_sum += lg.grad;
        row.rec += bd.rec;
        row.pre += bd.pre;
        row.kld_s += bd.kld_s;
        row.kld_e += bd.kld_e;
        row.total += bd.total;
        sse_sum += sse;
      }
      grad_sum /= static_cast<double>(stop - start);
      substrate::adam_step(adam, pv.values, grad_sum);
    }
    row.rec /= denom;
    row.pre /= denom;
    row.kld_s /= denom;
    row.kld_e /= denom;
    row.total /= denom;
    row.recon_mse = sse_sum / (denom * dims.t_split * n);
    if (trace) trace->push_back(row);
  }
  set_params(model, pv.values);
  return model;
}

TrainResult train_two_phase(const gen::Dataset& train, const RunConfig& cfg) {
  cfg.validate();
  std::vector<MatrixXd> windows = extract_windows(train.x, cfg.gen.window, cfg.gen.stride);
  hmm::EmOptions opts;
  opts.restarts = cfg.hmm.restarts;
  opts.max_iters = cfg.hmm.max_iters;
  opts.tol = cfg.hmm.tol;
  opts.seed = mix_seed(cfg.seed, 200);
  hmm::EmResult em = hmm::em_fit(windows, cfg.gen.env_count, opts);
  TrainResult out;
  out.env_model = em.model;
  out.model = train_phase2(train, em.model, cfg, &out.trace);
  return out;
}

ForecastResult forecast(const IdeaModel& model, const hmm::Arhmm& env_model,
                        const MatrixXd& x_hist, int horizon) {
  const ModelDims& d = model.dims;
  if (horizon != d.horizon() || horizon < 1)
    throw ContractViolation("forecast horizon must equal the model's window - t_split");
  if (x_hist.rows() != d.t_split || x_hist.cols() != d.n())
    throw ContractViolation("forecast expects a t_split x n history window");
  NoiseBundle nb = NoiseBundle::zero(d);
  Encoded enc = encode(model, x_hist, nb.s_hist, nb.e_hist);
  PredictedLatents pl = predict_latents(model, enc.z_s, enc.z_e, nb.s_fut, nb.e_fut);
  MatrixXd zf(horizon, d.n());
  for (int t = 0; t < horizon; ++t) {
    zf.row(t).head(d.n_s) =
        pl.z_s.segment(static_cast<Eigen::Index>(t) * d.n_s, d.n_s).transpose();
    zf.row(t).tail(d.n_e) =
        pl.z_e.segment(static_cast<Eigen::Index>(t) * d.n_e, d.n_e).transpose();
  }
  MatrixXd xs_hat = forecast_decode(model, zf);
  ForecastResult out;
  out.xhat = ((xs_hat.array().rowwise() * model.x_std.transpose().array()).rowwise() +
              model.x_mean.transpose().array())
                 .matrix();
  out.e_hat = hmm::predict_env(env_model, x_hist, horizon, hmm::EnvPrediction::argmax);
  return out;
}

namespace {

JsonValue net_to_json(const Mlp& net) {
  JsonValue layers = JsonValue::array();
  for (const substrate::Layer& l : net.layers) {
    JsonValue jl = JsonValue::object();
    jl.set("W", JsonValue::from_matrix(l.W));
    jl.set("b", JsonValue::from_vector(l.b));
    layers.push(std::move(jl));
  }
  return layers;
}

void net_from_json(const nlohmann::json& layers, Mlp& net, const std::string& name) {
  if (!layers.is_array() || layers.size() != net.layers.size())
    throw IoError("layer count mismatch for network '" + name + "'");
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    MatrixXd W = json_matrix(json_field(layers[k], "W"));
    VectorXd b = json_vector(json_field(layers[k], "b"));
    if (W.rows() != net.layers[k].W.rows() || W.cols() != net.layers[k].W.cols() ||
        b.size() != net.layers[k].b.size())
      throw IoError("layer shape mismatch for network '" + name + "'");
    net.layers[k].W = std::move(W);
    net.layers[k].b = std::move(b);
  }
}

}  // namespace

void save_model(const std::string& path, const IdeaModel& model, std::uint64_t seed) {
  model.validate();
  const ModelDims& d = model.dims;
  JsonValue dims = JsonValue::object();
  dims.set("n_s", JsonValue::integer(d.n_s));
  dims.set("n_e", JsonValue::integer(d.n_e));
  dims.set("env_count", JsonValue::integer(d.env_count));
  dims.set("window", JsonValue::integer(d.window));
  dims.set("t_split", JsonValue::integer(d.t_split));
  dims.set("prior_lag", JsonValue::integer(d.prior_lag));
  dims.set("hidden", JsonValue::integer(d.hidden));
  dims.set("prior_hidden", JsonValue::integer(d.prior_hidden));
  dims.set("alpha", JsonValue::number(d.alpha));
  dims.set("beta", JsonValue::number(d.beta));
  dims.set("gamma", JsonValue::number(d.gamma));

  JsonValue nets = JsonValue::object();
  nets.set("enc_s", net_to_json(model.enc_s));
  nets.set("enc_e", net_to_json(model.enc_e));
  if (d.horizon() > 0) {
    nets.set("pred_s", net_to_json(model.pred_s));
    nets.set("pred_e", net_to_json(model.pred_e));
  }
  nets.set("dec_hist", net_to_json(model.dec_hist));
  if (d.horizon() > 0) nets.set("dec_fut", net_to_json(model.dec_fut));
  JsonValue prior_s = JsonValue::array();
  for (const Mlp& p : model.prior_s) prior_s.push(net_to_json(p));
  nets.set("prior_s", std::move(prior_s));
  JsonValue prior_e = JsonValue::array();
  for (const Mlp& p : model.prior_e) prior_e.push(net_to_json(p));
  nets.set("prior_e", std::move(prior_e));

  JsonValue root = JsonValue::object();
  root.set("dims", std::move(dims));
  root.set("seed", JsonValue::string(std::to_string(seed)));
  root.set("x_mean", JsonValue::from_vector(model.x_mean));
  root.set("x_std", JsonValue::from_vector(model.x_std));
  root.set("nets", std::move(nets));
  write_text_file(path, root.dump() + "\n");
}

IdeaModel load_model(const std::string& path) {
  nlohmann::json j = load_json(path);
  const nlohmann::json& jd = json_field(j, "dims");
  ModelDims d;
  d.n_s = json_field(jd, "n_s").get<int>();
  d.n_e = json_field(jd, "n_e").get<int>();
  d.env_count = json_field(jd, "env_count").get<int>();
  d.window = json_field(jd, "window").get<int>();
  d.t_split = json_field(jd, "t_split").get<int>();
  d.prior_lag = json_field(jd, "prior_lag").get<int>();
  d.hidden = json_field(jd, "hidden").get<int>();
  d.prior_hidden = json_field(jd, "prior_hidden").get<int>();
  d.alpha = json_field(jd, "alpha").get<double>();
  d.beta = json_field(jd, "beta").get<double>();
  d.gamma = json_field(jd, "gamma").get<double>();
  try {
    d.validate();
  } catch (const ContractViolation& e) {
    throw IoError("invalid dims in " + path + ": " + e.what());
  }
  IdeaModel model = init_model(d, 0);
  model.x_mean = json_vector(json_field(j, "x_mean"));
  model.x_std = json_vector(json_field(j, "x_std"));
  const nlohmann::json& nets = json_field(j, "nets");
  net_from_json(json_field(nets, "enc_s"), model.enc_s, "enc_s");
  net_from_json(json_field(nets, "enc_e"), model.enc_e, "enc_e");
  if (d.horizon() > 0) {
    net_from_json(json_field(nets, "pred_s"), model.pred_s, "pred_s");
    net_from_json(json_field(nets, "pred_e"), model.pred_e, "pred_e");
  }
  net_from_json(json_field(nets, "dec_hist"), model.dec_hist, "dec_hist");
  if (d.horizon() > 0) net_from_json(json_field(nets, "dec_fut"), model.dec_fut, "dec_fut");
  const nlohmann::json& ps = json_field(nets, "prior_s");
  const nlohmann::json& pe = json_field(nets, "prior_e");
  if (!ps.is_array() || static_cast<int>(ps.size()) != d.n_s || !pe.is_array() ||
      static_cast<int>(pe.size()) != d.n_e)
    throw IoError("prior net counts do not match dims in " + path);
  for (int i = 0; i < d.n_s; ++i)
    net_from_json(ps[i], model.prior_s[i], "prior_s." + std::to_string(i));
  for (int jdim = 0; jdim < d.n_e; ++jdim)
    net_from_json(pe[jdim], model.prior_e[jdim], "prior_e." + std::to_string(jdim));
  try {
    model.validate();
  } catch (const ContractViolation& e) {
    throw IoError("invalid model in " + path + ": " + e.what());
  }
  return model;
}

}  // namespace idea::seqvae
