#pragma once

// Shared test oracles. Everything here is deliberately written the slow,
// obvious way and stays independent of the library's computation paths.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "idea/substrate.hpp"

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Composite Simpson rule, n subintervals (n even).
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double acc = f(a) + f(b);
  for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

// Plain-loop MLP evaluation, no Eigen products.
inline VectorXd naive_mlp(const idea::substrate::Mlp& net, const VectorXd& x) {
  std::vector<double> h(x.data(), x.data() + x.size());
  for (const auto& layer : net.layers) {
    std::vector<double> out(static_cast<std::size_t>(layer.W.rows()), 0.0);
    for (Eigen::Index r = 0; r < layer.W.rows(); ++r) {
      double acc = layer.b[r];
      for (Eigen::Index c = 0; c < layer.W.cols(); ++c)
        acc += layer.W(r, c) * h[static_cast<std::size_t>(c)];
      if (layer.act == idea::substrate::Act::leaky_relu && acc <= 0) acc *= layer.slope;
      out[static_cast<std::size_t>(r)] = acc;
    }
    h = std::move(out);
  }
  VectorXd v(static_cast<Eigen::Index>(h.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = h[static_cast<std::size_t>(i)];
  return v;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Kolmogorov-Smirnov statistic against a reference CDF.
inline double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double c = cdf(samples[i]);
    d = std::max(d, std::abs(c - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - c));
  }
  return d;
}

inline double pearson(const VectorXd& a, const VectorXd& b) {
  const double ma = a.mean(), mb = b.mean();
  const VectorXd da = a.array() - ma, db = b.array() - mb;
  const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  if (denom == 0.0) return 0.0;
  return da.dot(db) / denom;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double stderr_of_mean(const std::vector<double>& v) {
  const double m = mean(v);
  double s2 = 0.0;
  for (double x : v) s2 += (x - m) * (x - m);
  s2 /= static_cast<double>(v.size() - 1);
  return std::sqrt(s2 / static_cast<double>(v.size()));
}

}  // namespace oracle
