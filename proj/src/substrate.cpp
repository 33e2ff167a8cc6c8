#include "idea/substrate.hpp"

#include <cmath>

namespace idea::substrate {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMajor>;
using ConstRowMap = Eigen::Map<const RowMajor>;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_stable(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace

Eigen::Index Mlp::in_dim() const {
  validate();
  return layers.front().W.cols();
}

Eigen::Index Mlp::out_dim() const {
  validate();
  return layers.back().W.rows();
}

void Mlp::validate() const {
  if (layers.empty()) throw ContractViolation("Mlp: no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const Layer& l = layers[k];
    if (l.W.rows() == 0 || l.W.cols() == 0)
      throw ContractViolation("Mlp: empty weight matrix");
    if (l.b.size() != l.W.rows())
      throw ContractViolation("Mlp: bias length does not match weight rows");
    if (l.act == Act::leaky_relu && l.slope <= 0)
      throw ContractViolation("Mlp: leaky_relu slope must be positive");
    if (k > 0 && l.W.cols() != layers[k - 1].W.rows())
      throw ContractViolation("Mlp: layer widths do not chain");
  }
}

VectorXd mlp_apply(const Mlp& net, const VectorXd& x) {
  net.validate();
  if (x.size() != net.layers.front().W.cols())
    throw ContractViolation("mlp_apply: input width mismatch");
  VectorXd h = x;
  for (const Layer& l : net.layers) {
    h = (l.W * h + l.b).eval();
    if (l.act == Act::leaky_relu)
      h = h.unaryExpr([s = l.slope](double v) { return v > 0 ? v : s * v; });
  }
  return h;
}

Mlp make_mlp(const std::vector<int>& widths, double slope, Rng& rng, double out_scale) {
  if (widths.size() < 2) throw ContractViolation("make_mlp: need at least input and output width");
  Mlp net;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    Layer l;
    const int in = widths[k], out = widths[k + 1];
    if (in < 1 || out < 1) throw ContractViolation("make_mlp: widths must be positive");
    const double a = std::sqrt(6.0 / (in + out));
    l.W.resize(out, in);
    for (Eigen::Index i = 0; i < l.W.rows(); ++i)
      for (Eigen::Index j = 0; j < l.W.cols(); ++j) l.W(i, j) = rng.uniform(-a, a);
    l.b = VectorXd::Zero(out);
    const bool last = (k + 2 == widths.size());
    l.act = last ? Act::identity : Act::leaky_relu;
    l.slope = slope;
    if (last) l.W *= out_scale;
    net.layers.push_back(std::move(l));
  }
  return net;
}

// ---------------------------------------------------------------------------

Eigen::Index ParamIndex::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (rows < 1 || cols < 1) throw ContractViolation("ParamIndex: entry must be non-empty");
  if (by_name_.count(name)) throw ContractViolation("ParamIndex: duplicate name '" + name + "'");
  by_name_[name] = entries_.size();
  entries_.push_back({name, total_, rows, cols});
  total_ += rows * cols;
  return entries_.back().offset;
}

const ParamEntry& ParamIndex::at(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end())
    throw ContractViolation("ParamIndex: unknown name '" + std::string(name) + "'");
  return entries_[it->second];
}

bool ParamIndex::contains(std::string_view name) const {
  return by_name_.count(std::string(name)) > 0;
}

void register_mlp(ParamIndex& index, const std::string& prefix, const Mlp& net) {
  net.validate();
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const std::string base = prefix + ".L" + std::to_string(k);
    index.add(base + ".W", net.layers[k].W.rows(), net.layers[k].W.cols());
    index.add(base + ".b", net.layers[k].b.size(), 1);
  }
}

void pack_mlp(const ParamIndex& index, const std::string& prefix, const Mlp& net, VectorXd& out) {
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const std::string base = prefix + ".L" + std::to_string(k);
    const ParamEntry& we = index.at(base + ".W");
    const ParamEntry& be = index.at(base + ".b");
    if (we.rows != net.layers[k].W.rows() || we.cols != net.layers[k].W.cols())
      throw ContractViolation("pack_mlp: shape mismatch for " + base);
    RowMap(out.data() + we.offset, we.rows, we.cols) = net.layers[k].W;
    out.segment(be.offset, be.rows) = net.layers[k].b;
  }
}

void unpack_mlp(const ParamIndex& index, const std::string& prefix, Mlp& net, const VectorXd& in) {
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const std::string base = prefix + ".L" + std::to_string(k);
    const ParamEntry& we = index.at(base + ".W");
    const ParamEntry& be = index.at(base + ".b");
    if (we.rows != net.layers[k].W.rows() || we.cols != net.layers[k].W.cols())
      throw ContractViolation("unpack_mlp: shape mismatch for " + base);
    net.layers[k].W = ConstRowMap(in.data() + we.offset, we.rows, we.cols);
    net.layers[k].b = in.segment(be.offset, be.rows);
  }
}

// ---------------------------------------------------------------------------

Graph::Graph(const ParamVector& params) : params_(&params) {
  if (params.values.size() != params.index.total())
    throw ContractViolation("Graph: parameter vector size does not match its index");
}

Value Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size() - 1)};
}

const Graph::Node& Graph::node(Value v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw ContractViolation("Graph: invalid value handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

void Graph::require_same_size(Value a, Value b, const char* op) const {
  if (node(a).val.size() != node(b).val.size())
    throw ContractViolation(std::string("Graph::") + op + ": size mismatch");
}

Value Graph::constant(VectorXd v, std::string label) {
  Node n;
  n.op = Op::constant;
  n.val = std::move(v);
  n.label = std::move(label);
  return push(std::move(n));
}

Value Graph::zeros(Eigen::Index len) { return constant(VectorXd::Zero(len)); }

Value Graph::param(std::string_view name) {
  const ParamEntry& e = params_->index.at(name);
  Node n;
  n.op = Op::param;
  n.w_off = e.offset;
  n.val = params_->values.segment(e.offset, e.size());
  n.label = e.name;
  return push(std::move(n));
}

Value Graph::affine(std::string_view w_name, std::string_view b_name, Value x, int blocks) {
  const ParamEntry& we = params_->index.at(w_name);
  const ParamEntry& be = params_->index.at(b_name);
  if (blocks < 1) throw ContractViolation("Graph::affine: blocks must be positive");
  if (be.size() != we.rows) throw ContractViolation("Graph::affine: bias length mismatch");
  const Node& xn = node(x);
  if (xn.val.size() != we.cols * blocks)
    throw ContractViolation("Graph::affine: input width mismatch for " + we.name);
  Node n;
  n.op = Op::affine;
  n.src = {x.id};
  n.w_off = we.offset;
  n.w_rows = we.rows;
  n.w_cols = we.cols;
  n.b_off = be.offset;
  n.blocks = blocks;
  ConstRowMap W(params_->values.data() + we.offset, we.rows, we.cols);
  Eigen::Map<const MatrixXd> X(xn.val.data(), we.cols, blocks);
  n.val.resize(we.rows * blocks);
  Eigen::Map<MatrixXd> Y(n.val.data(), we.rows, blocks);
  Y.noalias() = W * X;
  Y.colwise() += params_->values.segment(be.offset, be.rows);
  return push(std::move(n));
}

Value Graph::leaky_relu(Value x, double slope) {
  if (slope <= 0) throw ContractViolation("Graph::leaky_relu: slope must be positive");
  Node n;
  n.op = Op::leaky_relu;
  n.src = {x.id};
  n.slope = slope;
  n.val = node(x).val.unaryExpr([slope](double v) { return v > 0 ? v : slope * v; });
  return push(std::move(n));
}

Value Graph::add(Value a, Value b) {
  require_same_size(a, b, "add");
  Node n;
  n.op = Op::add;
  n.src = {a.id, b.id};
  n.val = node(a).val + node(b).val;
  return push(std::move(n));
}

Value Graph::sub(Value a, Value b) {
  require_same_size(a, b, "sub");
  Node n;
  n.op = Op::sub;
  n.src = {a.id, b.id};
  n.val = node(a).val - node(b).val;
  return push(std::move(n));
}

Value Graph::mul(Value a, Value b) {
  require_same_size(a, b, "mul");
  Node n;
  n.op = Op::mul;
  n.src = {a.id, b.id};
  n.val = node(a).val.cwiseProduct(node(b).val);
  return push(std::move(n));
}

Value Graph::div(Value a, Value b) {
  require_same_size(a, b, "div");
  Node n;
  n.op = Op::div;
  n.src = {a.id, b.id};
  n.val = node(a).val.cwiseQuotient(node(b).val);
  return push(std::move(n));
}

Value Graph::scale(Value a, double c) {
  Node n;
  n.op = Op::scale_add;
  n.src = {a.id};
  n.c0 = c;
  n.c1 = 0.0;
  n.val = c * node(a).val;
  return push(std::move(n));
}

Value Graph::offset(Value a, double c) {
  Node n;
  n.op = Op::scale_add;
  n.src = {a.id};
  n.c0 = 1.0;
  n.c1 = c;
  n.val = node(a).val.array() + c;
  return push(std::move(n));
}

Value Graph::exp(Value a) {
  Node n;
  n.op = Op::exp_v;
  n.src = {a.id};
  n.val = node(a).val.array().exp();
  return push(std::move(n));
}

Value Graph::log(Value a) {
  Node n;
  n.op = Op::log_v;
  n.src = {a.id};
  n.val = node(a).val.array().log();
  return push(std::move(n));
}

Value Graph::softplus(Value a) {
  Node n;
  n.op = Op::softplus;
  n.src = {a.id};
  n.val = node(a).val.unaryExpr([](double v) { return softplus_stable(v); });
  return push(std::move(n));
}

Value Graph::tanh(Value a) {
  Node n;
  n.op = Op::tanh_v;
  n.src = {a.id};
  n.val = node(a).val.array().tanh();
  return push(std::move(n));
}

Value Graph::concat(const std::vector<Value>& parts) {
  if (parts.empty()) throw ContractViolation("Graph::concat: no parts");
  Node n;
  n.op = Op::concat;
  Eigen::Index total = 0;
  for (Value p : parts) {
    n.src.push_back(p.id);
    total += node(p).val.size();
  }
  n.val.resize(total);
  Eigen::Index at = 0;
  for (Value p : parts) {
    n.val.segment(at, node(p).val.size()) = node(p).val;
    at += node(p).val.size();
  }
  return push(std::move(n));
}

Value Graph::slice(Value a, Eigen::Index start, Eigen::Index len) {
  const Node& an = node(a);
  if (start < 0 || len < 1 || start + len > an.val.size())
    throw ContractViolation("Graph::slice: out of range");
  Node n;
  n.op = Op::slice;
  n.src = {a.id};
  n.start = start;
  n.width = len;
  n.val = an.val.segment(start, len);
  return push(std::move(n));
}

Value Graph::window_stack(Value a, Eigen::Index start, Eigen::Index width, Eigen::Index stride,
                          Eigen::Index count) {
  const Node& an = node(a);
  if (start < 0 || width < 1 || stride < 1 || count < 1 ||
      start + (count - 1) * stride + width > an.val.size())
    throw ContractViolation("Graph::window_stack: out of range");
  Node n;
  n.op = Op::window_stack;
  n.src = {a.id};
  n.start = start;
  n.width = width;
  n.stride = stride;
  n.count = count;
  n.val.resize(width * count);
  for (Eigen::Index k = 0; k < count; ++k)
    n.val.segment(k * width, width) = an.val.segment(start + k * stride, width);
  return push(std::move(n));
}

Value Graph::gather_stride(Value a, Eigen::Index start, Eigen::Index stride, Eigen::Index count) {
  const Node& an = node(a);
  if (start < 0 || stride < 1 || count < 1 || start + (count - 1) * stride >= an.val.size())
    throw ContractViolation("Graph::gather_stride: out of range");
  Node n;
  n.op = Op::gather_stride;
  n.src = {a.id};
  n.start = start;
  n.stride = stride;
  n.count = count;
  n.val.resize(count);
  for (Eigen::Index k = 0; k < count; ++k) n.val[k] = an.val[start + k * stride];
  return push(std::move(n));
}

Value Graph::sum(Value a) {
  Node n;
  n.op = Op::sum_v;
  n.src = {a.id};
  n.val = VectorXd::Constant(1, node(a).val.sum());
  return push(std::move(n));
}

Value Graph::dot(Value a, Value b) {
  require_same_size(a, b, "dot");
  Node n;
  n.op = Op::dot;
  n.src = {a.id, b.id};
  n.val = VectorXd::Constant(1, node(a).val.dot(node(b).val));
  return push(std::move(n));
}

Value Graph::gaussian_logpdf(Value x, Value mean, Value logvar) {
  require_same_size(x, mean, "gaussian_logpdf");
  require_same_size(x, logvar, "gaussian_logpdf");
  Node n;
  n.op = Op::gauss_logpdf;
  n.src = {x.id, mean.id, logvar.id};
  const auto& xv = node(x).val.array();
  const auto& mv = node(mean).val.array();
  const auto& lv = node(logvar).val.array();
  double total = (-0.5 * kLog2Pi - 0.5 * lv - 0.5 * (xv - mv).square() * (-lv).exp()).sum();
  n.val = VectorXd::Constant(1, total);
  return push(std::move(n));
}

Value Graph::reparam(Value mean, Value logvar, const VectorXd& noise) {
  require_same_size(mean, logvar, "reparam");
  if (noise.size() != node(mean).val.size())
    throw ContractViolation("Graph::reparam: noise size mismatch");
  Node n;
  n.op = Op::reparam;
  n.src = {mean.id, logvar.id};
  n.aux = noise;
  n.val = node(mean).val.array() + (node(logvar).val.array() * 0.5).exp() * noise.array();
  return push(std::move(n));
}

void Graph::set_label(Value v, std::string label) {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw ContractViolation("Graph::set_label: invalid handle");
  nodes_[static_cast<std::size_t>(v.id)].label = std::move(label);
}

double Graph::value(Value v) const {
  const Node& n = node(v);
  if (n.val.size() != 1) throw ContractViolation("Graph::value: node is not scalar");
  return n.val[0];
}

const VectorXd& Graph::vec(Value v) const { return node(v).val; }

std::string Graph::describe(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.label.empty()) return n.label;
  static const char* names[] = {"constant", "param", "affine", "leaky_relu", "add", "sub",
                                "mul", "div", "scale_add", "exp", "log", "softplus",
                                "tanh", "concat", "slice", "window_stack", "gather_stride",
                                "sum", "dot", "gaussian_logpdf", "reparam"};
  return std::string(names[static_cast<int>(n.op)]) + "#" + std::to_string(id);
}

void Graph::check_finite(Value v) const {
  if (node(v).val.allFinite()) return;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (!nodes_[i].val.allFinite()) throw NumericError(describe(static_cast<int>(i)));
  throw NumericError(describe(v.id));
}

VectorXd Graph::backward(Value root) {
  const Node& rn = node(root);
  if (rn.val.size() != 1) throw ContractViolation("Graph::backward: root must be scalar");
  check_finite(root);

  std::vector<VectorXd> adj(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) adj[i] = VectorXd::Zero(nodes_[i].val.size());
  VectorXd grad = VectorXd::Zero(params_->values.size());
  adj[static_cast<std::size_t>(root.id)][0] = 1.0;

  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    const VectorXd& g = adj[static_cast<std::size_t>(i)];
    if (g.isZero(0.0)) continue;
    switch (n.op) {
      case Op::constant:
        break;
      case Op::param:
        grad.segment(n.w_off, n.val.size()) += g;
        break;
      case Op::affine: {
        const Node& xn = nodes_[static_cast<std::size_t>(n.src[0])];
        ConstRowMap W(params_->values.data() + n.w_off, n.w_rows, n.w_cols);
        Eigen::Map<const MatrixXd> X(xn.val.data(), n.w_cols, n.blocks);
        Eigen::Map<const MatrixXd> G(g.data(), n.w_rows, n.blocks);
        RowMap dW(grad.data() + n.w_off, n.w_rows, n.w_cols);
        dW.noalias() += G * X.transpose();
        grad.segment(n.b_off, n.w_rows) += G.rowwise().sum();
        Eigen::Map<MatrixXd> dX(adj[static_cast<std::size_t>(n.src[0])].data(), n.w_cols,
                                n.blocks);
        dX.noalias() += W.transpose() * G;
        break;
      }
      case Op::leaky_relu: {
        const Node& xn = nodes_[static_cast<std::size_t>(n.src[0])];
        adj[static_cast<std::size_t>(n.src[0])].array() +=
            g.array() *
            xn.val.unaryExpr([s = n.slope](double v) { return v > 0 ? 1.0 : s; }).array();
        break;
      }
      case Op::add:
        adj[static_cast<std::size_t>(n.src[0])] += g;
        adj[static_cast<std::size_t>(n.src[1])] += g;
        break;
      case Op::sub:
        adj[static_cast<std::size_t>(n.src[0])] += g;
        adj[static_cast<std::size_t>(n.src[1])] -= g;
        break;
      case Op::mul:
        adj[static_cast<std::size_t>(n.src[0])].array() +=
            g.array() * nodes_[static_cast<std::size_t>(n.src[1])].val.array();
        adj[static_cast<std::size_t>(n.src[1])].array() +=
            g.array() * nodes_[static_cast<std::size_t>(n.src[0])].val.array();
        break;
      case Op::div: {
        const auto& bv = nodes_[static_cast<std::size_t>(n.src[1])].val.array();
        adj[static_cast<std::size_t>(n.src[0])].array() += g.array() / bv;
        adj[static_cast<std::size_t>(n.src[1])].array() -= g.array() * n.val.array() / bv;
        break;
      }
      case Op::scale_add:
        adj[static_cast<std::size_t>(n.src[0])] += n.c0 * g;
        break;
      case Op::exp_v:
        adj[static_cast<std::size_t>(n.src[0])].array() += g.array() * n.val.array();
        break;
      case Op::log_v:
        adj[static_cast<std::size_t>(n.src[0])].array() +=
            g.array() / nodes_[static_cast<std::size_t>(n.src[0])].val.array();
        break;
      case Op::softplus:
        adj[static_cast<std::size_t>(n.src[0])].array() +=
            g.array() * nodes_[static_cast<std::size_t>(n.src[0])]
                            .val.unaryExpr([](double v) { return sigmoid(v); })
                            .array();
        break;
      case Op::tanh_v:
        adj[static_cast<std::size_t>(n.src[0])].array() +=
            g.array() * (1.0 - n.val.array().square());
        break;
      case Op::concat: {
        Eigen::Index at = 0;
        for (int sid : n.src) {
          auto& dst = adj[static_cast<std::size_t>(sid)];
          dst += g.segment(at, dst.size());
          at += dst.size();
        }
        break;
      }
      case Op::slice:
        adj[static_cast<std::size_t>(n.src[0])].segment(n.start, n.width) += g;
        break;
      case Op::window_stack:
        for (Eigen::Index k = 0; k < n.count; ++k)
          adj[static_cast<std::size_t>(n.src[0])].segment(n.start + k * n.stride, n.width) +=
              g.segment(k * n.width, n.width);
        break;
      case Op::gather_stride:
        for (Eigen::Index k = 0; k < n.count; ++k)
          adj[static_cast<std::size_t>(n.src[0])][n.start + k * n.stride] += g[k];
        break;
      case Op::sum_v:
        adj[static_cast<std::size_t>(n.src[0])].array() += g[0];
        break;
      case Op::dot:
        adj[static_cast<std::size_t>(n.src[0])] +=
            g[0] * nodes_[static_cast<std::size_t>(n.src[1])].val;
        adj[static_cast<std::size_t>(n.src[1])] +=
            g[0] * nodes_[static_cast<std::size_t>(n.src[0])].val;
        break;
      case Op::gauss_logpdf: {
        const double g0 = g[0];
        const auto& xv = nodes_[static_cast<std::size_t>(n.src[0])].val.array();
        const auto& mv = nodes_[static_cast<std::size_t>(n.src[1])].val.array();
        const auto& lv = nodes_[static_cast<std::size_t>(n.src[2])].val.array();
        Eigen::ArrayXd iv = (-lv).exp();
        Eigen::ArrayXd d = xv - mv;
        adj[static_cast<std::size_t>(n.src[0])].array() += g0 * (-d * iv);
        adj[static_cast<std::size_t>(n.src[1])].array() += g0 * (d * iv);
        adj[static_cast<std::size_t>(n.src[2])].array() += g0 * (-0.5 + 0.5 * d.square() * iv);
        break;
      }
      case Op::reparam: {
        adj[static_cast<std::size_t>(n.src[0])] += g;
        const auto& mv = nodes_[static_cast<std::size_t>(n.src[0])].val.array();
        adj[static_cast<std::size_t>(n.src[1])].array() +=
            g.array() * 0.5 * (n.val.array() - mv);
        break;
      }
    }
  }
  return grad;
}

Value graph_mlp(Graph& g, const std::string& prefix, const Mlp& shape, Value x, int blocks) {
  shape.validate();
  Value h = x;
  for (std::size_t k = 0; k < shape.layers.size(); ++k) {
    const std::string base = prefix + ".L" + std::to_string(k);
    h = g.affine(base + ".W", base + ".b", h, blocks);
    if (shape.layers[k].act == Act::leaky_relu) h = g.leaky_relu(h, shape.layers[k].slope);
  }
  return h;
}

// ---------------------------------------------------------------------------

LossGrad loss_grad(const ParamVector& params, const LossFn& build) {
  Graph g(params);
  Value root = build(g);
  LossGrad out;
  out.grad = g.backward(root);  // also checks finiteness
  out.value = g.value(root);
  return out;
}

VectorXd fd_gradient(const ParamVector& params, const LossFn& build, double eps) {
  if (eps <= 0) throw ContractViolation("fd_gradient: eps must be positive");
  ParamVector p = params;
  VectorXd grad(p.values.size());
  for (Eigen::Index i = 0; i < p.values.size(); ++i) {
    const double saved = p.values[i];
    p.values[i] = saved + eps;
    Graph gp(p);
    const double fp = gp.value(build(gp));
    p.values[i] = saved - eps;
    Graph gm(p);
    const double fm = gm.value(build(gm));
    p.values[i] = saved;
    grad[i] = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

double grad_rel_error(const VectorXd& analytic, const VectorXd& fd) {
  if (analytic.size() != fd.size()) throw ContractViolation("grad_rel_error: size mismatch");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(fd[i]));
    worst = std::max(worst, std::abs(analytic[i] - fd[i]) / denom);
  }
  return worst;
}

double grad_check(const ParamVector& params, const LossFn& build, double eps) {
  return grad_rel_error(loss_grad(params, build).grad, fd_gradient(params, build, eps));
}

// ---------------------------------------------------------------------------

void AdamState::validate(Eigen::Index n) const {
  if (m.size() != n || v.size() != n)
    throw ContractViolation("AdamState: moment buffers do not match parameter size");
  if (t < 0) throw ContractViolation("AdamState: negative step count");
  if (lr <= 0 || eps <= 0) throw ContractViolation("AdamState: lr and eps must be positive");
  if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
    throw ContractViolation("AdamState: betas must lie in (0, 1)");
}

void adam_step(AdamState& state, VectorXd& params, const VectorXd& grad) {
  state.validate(params.size());
  if (grad.size() != params.size()) throw ContractViolation("adam_step: gradient size mismatch");
  state.t += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v.array().matrix() +
            (1.0 - state.beta2) * grad.array().square().matrix();
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  params.array() -=
      state.lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + state.eps);
}

// ---------------------------------------------------------------------------

double gaussian_logpdf(double x, double mean, double logvar) {
  const double d = x - mean;
  return -0.5 * kLog2Pi - 0.5 * logvar - 0.5 * d * d * std::exp(-logvar);
}

double gaussian_logpdf(const VectorXd& x, const VectorXd& mean, const VectorXd& logvar) {
  if (x.size() != mean.size() || x.size() != logvar.size())
    throw ContractViolation("gaussian_logpdf: size mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) total += gaussian_logpdf(x[i], mean[i], logvar[i]);
  return total;
}

VectorXd reparam_sample(const VectorXd& mean, const VectorXd& logvar, const VectorXd& noise) {
  if (mean.size() != logvar.size() || mean.size() != noise.size())
    throw ContractViolation("reparam_sample: size mismatch");
  return mean.array() + (logvar.array() * 0.5).exp() * noise.array();
}

}  // namespace idea::substrate
