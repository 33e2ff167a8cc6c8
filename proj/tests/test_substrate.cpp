#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "idea/rng.hpp"
#include "idea/substrate.hpp"

using namespace idea;
using namespace idea::substrate;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Mlp identity_net(int n) {
  Mlp net;
  Layer l;
  l.W = MatrixXd::Identity(n, n);
  l.b = VectorXd::Zero(n);
  l.act = Act::identity;
  net.layers.push_back(l);
  return net;
}

}  // namespace

TEST_CASE("mlp_apply: identity net reproduces its input") {
  Rng rng(11);
  Mlp net = identity_net(5);
  VectorXd x(5);
  for (int i = 0; i < 5; ++i) x[i] = rng.normal();
  CHECK((mlp_apply(net, x) - x).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("mlp_apply: leaky_relu negative branch, hand values") {
  Mlp net;
  Layer l;
  l.W.resize(2, 2);
  l.W << 1.0, 0.0, 0.0, 1.0;
  l.b.resize(2);
  l.b << 0.5, -2.0;
  l.act = Act::leaky_relu;
  l.slope = 0.2;
  net.layers.push_back(l);
  VectorXd x(2);
  x << 1.0, 1.0;
  VectorXd y = mlp_apply(net, x);
  CHECK(y[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(-0.2).epsilon(1e-15));  // 0.2 * (1 - 2)
}

TEST_CASE("mlp_apply matches straight-line re-evaluation on random nets") {
  Rng rng(202);
  for (int trial = 0; trial < 20; ++trial) {
    Mlp net = make_mlp({3, 7, 5, 2}, 0.2, rng);
    VectorXd x(3);
    for (int i = 0; i < 3; ++i) x[i] = rng.normal();
    VectorXd got = mlp_apply(net, x);
    VectorXd want = oracle::naive_mlp(net, x);
    CHECK((got - want).lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("mlp_apply: shape violations throw") {
  Mlp net = identity_net(3);
  CHECK_THROWS_AS(mlp_apply(net, VectorXd::Zero(4)), ContractViolation);
  Mlp empty;
  CHECK_THROWS_AS(mlp_apply(empty, VectorXd::Zero(1)), ContractViolation);
  Mlp bad;
  Layer l;
  l.W = MatrixXd::Identity(2, 2);
  l.b = VectorXd::Zero(3);
  bad.layers.push_back(l);
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
}

TEST_CASE("param index: offsets, round trip, duplicate rejection") {
  Rng rng(7);
  Mlp net = make_mlp({4, 6, 3}, 0.2, rng);
  ParamIndex idx;
  register_mlp(idx, "net", net);
  CHECK(idx.total() == 4 * 6 + 6 + 6 * 3 + 3);

  ParamVector pv{idx};
  pack_mlp(pv.index, "net", net, pv.values);
  Mlp copy = net;
  for (auto& l : copy.layers) {
    l.W.setZero();
    l.b.setZero();
  }
  unpack_mlp(pv.index, "net", copy, pv.values);
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    CHECK((copy.layers[k].W - net.layers[k].W).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((copy.layers[k].b - net.layers[k].b).lpNorm<Eigen::Infinity>() == 0.0);
  }

  ParamIndex dup;
  dup.add("w", 2, 2);
  CHECK_THROWS_AS(dup.add("w", 1, 1), ContractViolation);
  CHECK_THROWS_AS(dup.at("missing"), ContractViolation);
}

TEST_CASE("loss_grad: quadratic in one parameter") {
  ParamIndex idx;
  idx.add("p", 1, 1);
  ParamVector pv{idx};
  pv.values[0] = 3.0;
  auto loss = [](Graph& g) {
    Value p = g.param("p");
    return g.sum(g.mul(p, p));
  };
  auto [value, grad] = loss_grad(pv, loss);
  CHECK(value == doctest::Approx(9.0).epsilon(1e-15));
  CHECK(grad[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("loss_grad: constant loss has zero gradient") {
  ParamIndex idx;
  idx.add("p", 3, 1);
  ParamVector pv{idx};
  pv.values << 1.0, -2.0, 0.5;
  auto loss = [](Graph& g) { return g.sum(g.constant(VectorXd::Constant(2, 2.5))); };
  auto [value, grad] = loss_grad(pv, loss);
  CHECK(value == doctest::Approx(5.0));
  CHECK(grad.lpNorm<Eigen::Infinity>() == 0.0);
}

// One composite loss touching every differentiable primitive; central
// differences are the oracle.
TEST_CASE("grad_check: composite graph over the full op set stays below 1e-4") {
  Rng rng(31);
  Mlp net = make_mlp({4, 8, 6}, 0.2, rng);
  ParamIndex idx;
  register_mlp(idx, "net", net);
  idx.add("extra", 6, 1);
  ParamVector pv{idx};
  pack_mlp(pv.index, "net", net, pv.values);
  for (Eigen::Index i = pv.values.size() - 6; i < pv.values.size(); ++i)
    pv.values[i] = 0.3 + 0.1 * static_cast<double>(i % 5);

  VectorXd x(4), noise(3);
  for (int i = 0; i < 4; ++i) x[i] = rng.normal();
  for (int i = 0; i < 3; ++i) noise[i] = rng.normal();

  auto loss = [&](Graph& g) -> Value {
    Value in = g.constant(x);
    Value h = graph_mlp(g, "net", net, in);           // affine + leaky_relu
    Value extra = g.param("extra");
    Value mixed = g.mul(h, extra);                    // elementwise product
    Value mean = g.slice(mixed, 0, 3);
    Value raw = g.slice(mixed, 3, 3);
    Value lv = g.scale(g.tanh(g.scale(raw, 0.2)), 2.0);
    Value z = g.reparam(mean, lv, noise);
    Value lq = g.gaussian_logpdf(z, mean, lv);
    Value sigma = g.offset(g.softplus(raw), 1e-4);
    Value eps_hat = g.div(g.sub(z, mean), sigma);
    Value lp = g.sub(g.gaussian_logpdf(eps_hat, g.zeros(3), g.zeros(3)),
                     g.sum(g.log(sigma)));
    Value windows = g.window_stack(mixed, 0, 2, 1, 5);
    Value picked = g.gather_stride(windows, 1, 2, 5);
    Value spread = g.exp(g.scale(picked, 0.1));
    Value parts = g.concat({lq, lp, g.dot(spread, spread), g.sum(g.add(z, z))});
    return g.sum(g.sub(parts, g.scale(parts, 0.5)));
  };

  CHECK(grad_check(pv, loss, 1e-5) < 1e-4);
}

TEST_CASE("grad_check flags a corrupted derivative") {
  ParamIndex idx;
  idx.add("p", 4, 1);
  ParamVector pv{idx};
  pv.values << 0.7, -0.4, 1.2, 0.1;
  auto loss = [](Graph& g) { return g.sum(g.exp(g.param("p"))); };

  VectorXd fd = fd_gradient(pv, loss, 1e-5);
  VectorXd analytic = loss_grad(pv, loss).grad;
  CHECK(grad_rel_error(analytic, fd) < 1e-6);

  // A derivative that is off by one part in a thousand must not slip through.
  VectorXd broken = analytic;
  broken[2] *= 1.0 + 1e-3;
  CHECK(grad_rel_error(broken, fd) > 1e-4);
}

TEST_CASE("affine with blocks equals per-block application") {
  Rng rng(77);
  Mlp net = make_mlp({3, 4}, 0.2, rng);
  ParamIndex idx;
  register_mlp(idx, "n", net);
  ParamVector pv{idx};
  pack_mlp(pv.index, "n", net, pv.values);

  VectorXd x(9);
  for (int i = 0; i < 9; ++i) x[i] = rng.normal();

  Graph g(pv);
  Value xc = g.constant(x);
  Value batched = g.affine("n.L0.W", "n.L0.b", xc, 3);
  for (int blk = 0; blk < 3; ++blk) {
    Value one = g.affine("n.L0.W", "n.L0.b", g.slice(xc, 3 * blk, 3), 1);
    CHECK((g.vec(batched).segment(4 * blk, 4) - g.vec(one)).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("graph evaluation is deterministic") {
  ParamIndex idx;
  idx.add("p", 5, 1);
  ParamVector pv{idx};
  pv.values << 0.3, -1.2, 0.8, 2.0, -0.5;
  auto loss = [](Graph& g) {
    Value p = g.param("p");
    return g.gaussian_logpdf(g.tanh(p), g.zeros(5), g.softplus(p));
  };
  auto a = loss_grad(pv, loss);
  auto b = loss_grad(pv, loss);
  CHECK(a.value == b.value);
  CHECK((a.grad - b.grad).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("non-finite loss raises NumericError naming the term") {
  ParamIndex idx;
  idx.add("p", 1, 1);
  ParamVector pv{idx};
  pv.values[0] = -2.0;
  auto loss = [](Graph& g) {
    Value bad = g.log(g.param("p"));  // log of a negative number
    g.set_label(bad, "bad_log_term");
    return g.sum(bad);
  };
  CHECK_THROWS_WITH_AS(loss_grad(pv, loss), "non-finite value in term 'bad_log_term'",
                       NumericError);
}

TEST_CASE("backward rejects a non-scalar root") {
  ParamIndex idx;
  idx.add("p", 2, 1);
  ParamVector pv{idx};
  Graph g(pv);
  Value p = g.param("p");
  CHECK_THROWS_AS(g.backward(p), ContractViolation);
}

TEST_CASE("adam_step: frozen two-step transcript") {
  // Hand-computed from the published update rule with lr 1e-3, beta1 0.9,
  // beta2 0.999, eps 1e-8, constant gradient (0.5, -1.5).
  VectorXd p(2);
  p << 1.0, -2.0;
  VectorXd g(2);
  g << 0.5, -1.5;
  AdamState st(2);

  adam_step(st, p, g);
  CHECK(st.t == 1);
  CHECK(p[0] == doctest::Approx(0.99900000002).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(-1.9990000000066668).epsilon(1e-12));
  CHECK(st.m[0] == doctest::Approx(0.049999999999999989).epsilon(1e-14));
  CHECK(st.v[0] == doctest::Approx(0.00025000000000000022).epsilon(1e-14));

  adam_step(st, p, g);
  CHECK(st.t == 2);
  CHECK(p[0] == doctest::Approx(0.99800000004).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(-1.9980000000133336).epsilon(1e-12));
  CHECK(st.m[1] == doctest::Approx(-0.28499999999999992).epsilon(1e-14));
  CHECK(st.v[1] == doctest::Approx(0.0044977500000000035).epsilon(1e-14));
}

TEST_CASE("adam_step: repeated identical gradients do not grow the step") {
  VectorXd p = VectorXd::Zero(1);
  VectorXd g = VectorXd::Constant(1, 0.5);
  AdamState st(1);
  double prev = 10.0;
  double before = p[0];
  for (int t = 0; t < 5; ++t) {
    adam_step(st, p, g);
    double step = std::abs(p[0] - before);
    CHECK(step <= prev + 1e-12);
    prev = step;
    before = p[0];
  }
}

TEST_CASE("adam_step: state validation") {
  VectorXd p = VectorXd::Zero(3);
  VectorXd g = VectorXd::Zero(3);
  AdamState st(2);
  CHECK_THROWS_AS(adam_step(st, p, g), ContractViolation);
  AdamState bad(3);
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(adam_step(bad, p, g), ContractViolation);
  AdamState neg(3);
  neg.lr = 0.0;
  CHECK_THROWS_AS(adam_step(neg, p, g), ContractViolation);
}

TEST_CASE("gaussian_logpdf: frozen closed-form values") {
  CHECK(gaussian_logpdf(0.0, 0.0, 0.0) == doctest::Approx(-0.91893853320467267).epsilon(1e-15));
  VectorXd x(2), m(2), lv(2);
  x << 1.3, -2.2;
  m << 0.3, -2.2;
  lv << 0.0, std::log(4.0);
  CHECK(gaussian_logpdf(x, m, lv) == doctest::Approx(-3.0310242469692907).epsilon(1e-14));
  CHECK(gaussian_logpdf(2.0, 0.5, std::log(0.25)) ==
        doctest::Approx(-4.7257913526447277).epsilon(1e-14));
}

TEST_CASE("gaussian_logpdf integrates to 1 over a fine grid") {
  for (double logvar : {0.0, std::log(0.25), std::log(3.0)}) {
    for (double mean : {0.0, -1.7, 2.4}) {
      const double sigma = std::exp(0.5 * logvar);
      double mass = oracle::simpson(
          [&](double x) { return std::exp(gaussian_logpdf(x, mean, logvar)); },
          mean - 10 * sigma, mean + 10 * sigma, 4000);
      CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("gaussian_logpdf translation invariance is exact on dyadic inputs") {
  Rng rng(5150);
  for (int trial = 0; trial < 200; ++trial) {
    // Multiples of 1/1024 in [-8, 8]; sums with small integers stay exact.
    auto dyadic = [&]() { return static_cast<double>(rng.uniform_int(16385) - 8192) / 1024.0; };
    const double x = dyadic(), m = dyadic(), lv = dyadic();
    const double c = static_cast<double>(rng.uniform_int(33) - 16);
    CHECK(gaussian_logpdf(x + c, m + c, lv) == gaussian_logpdf(x, m, lv));
  }
}

TEST_CASE("graph gaussian_logpdf agrees with the plain function") {
  Rng rng(88);
  ParamIndex idx;
  idx.add("unused", 1, 1);
  ParamVector pv{idx};
  for (int trial = 0; trial < 10; ++trial) {
    VectorXd x(4), m(4), lv(4);
    for (int i = 0; i < 4; ++i) {
      x[i] = rng.normal();
      m[i] = rng.normal();
      lv[i] = 0.5 * rng.normal();
    }
    Graph g(pv);
    double got = g.value(g.gaussian_logpdf(g.constant(x), g.constant(m), g.constant(lv)));
    CHECK(got == doctest::Approx(gaussian_logpdf(x, m, lv)).epsilon(1e-13));
  }
}

TEST_CASE("reparam_sample: zero noise returns the mean") {
  VectorXd m(3), lv(3);
  m << 0.4, -1.0, 2.0;
  lv << 0.3, -0.2, 0.0;
  CHECK((reparam_sample(m, lv, VectorXd::Zero(3)) - m).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("reparam_sample: sample moments match mean and exp(logvar)") {
  Rng rng(1234);
  const double mean = 0.7, logvar = std::log(0.49);
  const int n = 100000;
  std::vector<double> draws(n);
  for (int i = 0; i < n; ++i) {
    VectorXd z = reparam_sample(VectorXd::Constant(1, mean), VectorXd::Constant(1, logvar),
                                VectorXd::Constant(1, rng.normal()));
    draws[static_cast<std::size_t>(i)] = z[0];
  }
  const double m = oracle::mean(draws);
  const double se = oracle::stderr_of_mean(draws);
  CHECK(std::abs(m - mean) < 3.0 * se);
  double var = 0.0;
  for (double d : draws) var += (d - m) * (d - m);
  var /= n - 1;
  // Var of the sample variance of a normal is 2 sigma^4 / (n - 1).
  const double var_se = std::sqrt(2.0 * 0.49 * 0.49 / (n - 1));
  CHECK(std::abs(var - 0.49) < 3.0 * var_se);
}

TEST_CASE("rng: mix_seed separates streams and draws are deterministic") {
  CHECK(mix_seed(0, 0) != mix_seed(0, 1));
  CHECK(mix_seed(1, 0) != mix_seed(0, 0));
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  Rng c(42);
  for (int i = 0; i < 1000; ++i) {
    int v = c.uniform_int(7);
    CHECK(v >= 0);
    CHECK(v < 7);
  }
}

TEST_CASE("rng: normals pass a KS test at the 1% level") {
  Rng rng(999);
  std::vector<double> samples(10000);
  for (auto& s : samples) s = rng.normal();
  // 1% critical value for n = 10000 is about 1.63 / sqrt(n).
  CHECK(oracle::ks_statistic(samples, oracle::normal_cdf) < 1.63 / std::sqrt(10000.0));
}
