#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "idea/common.hpp"
#include "idea/rng.hpp"

namespace idea::substrate {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Act { identity, leaky_relu };

struct Layer {
  MatrixXd W;  // out x in
  VectorXd b;  // out
  Act act = Act::identity;
  double slope = 0.2;
};

// Plain feed-forward net, layers applied in order.
struct Mlp {
  std::vector<Layer> layers;

  Eigen::Index in_dim() const;
  Eigen::Index out_dim() const;
  void validate() const;  // throws ContractViolation on empty net or width mismatch
};

VectorXd mlp_apply(const Mlp& net, const VectorXd& x);

// Glorot-uniform weights, zero biases. Hidden layers use leaky_relu(slope),
// the last layer is linear. out_scale multiplies the final layer's weights.
Mlp make_mlp(const std::vector<int>& widths, double slope, Rng& rng, double out_scale = 1.0);

// ---------------------------------------------------------------------------
// Flat parameter storage. Entries are registered once (name, shape) and live
// at fixed offsets; matrices are packed row-major.

struct ParamEntry {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index rows = 0, cols = 0;

  Eigen::Index size() const { return rows * cols; }
};

class ParamIndex {
 public:
  Eigen::Index add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  const ParamEntry& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  Eigen::Index total() const { return total_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> by_name_;
  Eigen::Index total_ = 0;
};

struct ParamVector {
  ParamIndex index;
  VectorXd values;

  ParamVector() = default;
  explicit ParamVector(ParamIndex idx)
      : index(std::move(idx)), values(VectorXd::Zero(index.total())) {}
};

// Layer k of `prefix` is registered as prefix.Lk.W / prefix.Lk.b.
void register_mlp(ParamIndex& index, const std::string& prefix, const Mlp& net);
void pack_mlp(const ParamIndex& index, const std::string& prefix, const Mlp& net, VectorXd& out);
void unpack_mlp(const ParamIndex& index, const std::string& prefix, Mlp& net, const VectorXd& in);

// ---------------------------------------------------------------------------
// Reverse-mode graph over vector-valued nodes. The op set is closed and
// small; everything differentiable in this codebase is composed from it.
// Nodes may only reference earlier nodes, so creation order is already a
// topological order.

struct Value {
  int id = -1;
};

class Graph {
 public:
  explicit Graph(const ParamVector& params);

  Value constant(VectorXd v, std::string label = {});
  Value zeros(Eigen::Index n);
  // Parameter entry as a flat (row-major) vector leaf.
  Value param(std::string_view name);

  // y[blk] = W x[blk] + b for `blocks` equal slices of x.
  Value affine(std::string_view w_name, std::string_view b_name, Value x, int blocks = 1);
  Value leaky_relu(Value x, double slope);
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value div(Value a, Value b);
  Value scale(Value a, double c);   // c * a
  Value offset(Value a, double c);  // a + c
  Value exp(Value a);
  Value log(Value a);
  Value softplus(Value a);
  Value tanh(Value a);
  Value concat(const std::vector<Value>& parts);
  Value slice(Value a, Eigen::Index start, Eigen::Index len);
  // Concatenation of `count` windows a[start + k*stride .. +width).
  Value window_stack(Value a, Eigen::Index start, Eigen::Index width, Eigen::Index stride,
                     Eigen::Index count);
  // y[k] = a[start + k*stride].
  Value gather_stride(Value a, Eigen::Index start, Eigen::Index stride, Eigen::Index count);
  Value sum(Value a);  // size-1
  Value dot(Value a, Value b);
  // Diagonal Gaussian log density summed over dims; size-1.
  Value gaussian_logpdf(Value x, Value mean, Value logvar);
  // mean + exp(logvar / 2) * noise, noise held fixed.
  Value reparam(Value mean, Value logvar, const VectorXd& noise);

  void set_label(Value v, std::string label);
  double value(Value v) const;  // size-1 nodes
  const VectorXd& vec(Value v) const;

  // Accumulated d(root)/d(params); root must be size-1 and finite, otherwise
  // NumericError names the first non-finite node.
  VectorXd backward(Value root);

  // Throws NumericError if the node is non-finite (searches for the first
  // non-finite node in creation order to name the culprit).
  void check_finite(Value v) const;

 private:
  enum class Op {
    constant, param, affine, leaky_relu, add, sub, mul, div, scale_add, exp_v, log_v,
    softplus, tanh_v, concat, slice, window_stack, gather_stride, sum_v, dot,
    gauss_logpdf, reparam
  };

  struct Node {
    Op op;
    std::vector<int> src;
    VectorXd val;
    Eigen::Index w_off = -1, w_rows = 0, w_cols = 0, b_off = -1;
    Eigen::Index start = 0, width = 0, stride = 0, count = 0;
    int blocks = 1;
    double c0 = 1.0, c1 = 0.0, slope = 0.0;
    VectorXd aux;
    std::string label;
  };

  Value push(Node n);
  const Node& node(Value v) const;
  void require_same_size(Value a, Value b, const char* op) const;
  std::string describe(int id) const;

  const ParamVector* params_;
  std::vector<Node> nodes_;
};

// Applies a registered net inside a graph. `shape` supplies layer count and
// activations; weights are read from the graph's parameter vector.
Value graph_mlp(Graph& g, const std::string& prefix, const Mlp& shape, Value x, int blocks = 1);

// ---------------------------------------------------------------------------
// Loss evaluation and gradient checking.

using LossFn = std::function<Value(Graph&)>;

struct LossGrad {
  double value = 0.0;
  VectorXd grad;
};

LossGrad loss_grad(const ParamVector& params, const LossFn& build);

// Central differences, step eps per coordinate.
VectorXd fd_gradient(const ParamVector& params, const LossFn& build, double eps);

// max_i |a_i - b_i| / max(1e-8, |a_i| + |b_i|)
double grad_rel_error(const VectorXd& analytic, const VectorXd& fd);

double grad_check(const ParamVector& params, const LossFn& build, double eps = 1e-5);

// ---------------------------------------------------------------------------
// Adam (bias-corrected first/second moments).

struct AdamState {
  VectorXd m, v;
  long t = 0;
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  AdamState() = default;
  explicit AdamState(Eigen::Index n, double lr_in = 1e-3)
      : m(VectorXd::Zero(n)), v(VectorXd::Zero(n)), lr(lr_in) {}
  void validate(Eigen::Index n) const;
};

// One minimization step in place.
void adam_step(AdamState& state, VectorXd& params, const VectorXd& grad);

// ---------------------------------------------------------------------------
// Gaussian utilities shared across modules.

double gaussian_logpdf(double x, double mean, double logvar);
double gaussian_logpdf(const VectorXd& x, const VectorXd& mean, const VectorXd& logvar);
VectorXd reparam_sample(const VectorXd& mean, const VectorXd& logvar, const VectorXd& noise);

}  // namespace idea::substrate
