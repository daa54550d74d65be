#include "diprl/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "diprl/kernels.hpp"

namespace diprl::ad {

namespace {
const kernels::Backend& K() { return kernels::active(); }

double stable_sigmoid(double x) {
  // Branch on sign so exp never overflows.
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

// ---------------------------------------------------------------- ParamSet

std::size_t ParamSet::add(std::string name, std::vector<std::size_t> shape) {
  if (has(name)) throw ContractError("duplicate parameter name: " + name);
  std::size_t sz = 1;
  for (std::size_t d : shape) sz *= d;
  Entry e{std::move(name), std::move(shape), data_.size(), sz};
  data_.resize(data_.size() + sz, 0.0);
  entries_.push_back(std::move(e));
  return entries_.size() - 1;
}

const ParamSet::Entry& ParamSet::entry(std::string_view name) const {
  for (const Entry& e : entries_) {
    if (e.name == name) return e;
  }
  throw ContractError("unknown parameter: " + std::string(name));
}

bool ParamSet::has(std::string_view name) const {
  for (const Entry& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

std::span<double> ParamSet::values(std::string_view name) {
  const Entry& e = entry(name);
  return {data_.data() + e.offset, e.size};
}

std::span<const double> ParamSet::values(std::string_view name) const {
  const Entry& e = entry(name);
  return {data_.data() + e.offset, e.size};
}

void ParamSet::unflatten(std::span<const double> flat_values) {
  if (flat_values.size() != data_.size()) {
    throw ContractError("unflatten: expected " + std::to_string(data_.size()) +
                        " values, got " + std::to_string(flat_values.size()));
  }
  std::copy(flat_values.begin(), flat_values.end(), data_.begin());
}

// -------------------------------------------------------------------- Tape

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConst: return "const";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kDot: return "dot";
    case Op::kSum: return "sum";
    case Op::kSoftmax: return "softmax";
    case Op::kLogSoftmax: return "log-softmax";
    case Op::kClamp: return "clamp";
    case Op::kSquare: return "square";
    case Op::kMatvec: return "matvec";
    case Op::kPick: return "pick";
    case Op::kMin: return "min";
    case Op::kMax: return "max";
  }
  return "?";
}

void Tape::check_node(NodeId n, const char* what) const {
  if (!n.valid() || n.v >= nodes_.size()) {
    throw ContractError(std::string("invalid node handle passed to ") + what);
  }
}

void Tape::fail(std::uint32_t node, const std::string& msg) const {
  throw EvalError(msg + " at node " + std::to_string(node) + " (" +
                  op_name(nodes_[node].op) + ")");
}

NodeId Tape::push(Op op, NodeId a, NodeId b, std::size_t len) {
  Node n;
  n.op = op;
  n.a = a.v;
  n.b = b.v;
  n.val_off = static_cast<std::uint32_t>(values_.size());
  n.len = static_cast<std::uint32_t>(len);
  values_.resize(values_.size() + len, 0.0);
  nodes_.push_back(n);
  has_grads_ = false;
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Tape::leaf(std::span<const double> values) {
  NodeId id = push(Op::kLeaf, NodeId{}, NodeId{}, values.size());
  std::copy(values.begin(), values.end(), val_ptr(id.v));
  return id;
}

NodeId Tape::constant(std::span<const double> values) {
  NodeId id = push(Op::kConst, NodeId{}, NodeId{}, values.size());
  std::copy(values.begin(), values.end(), val_ptr(id.v));
  return id;
}

NodeId Tape::binary_ew(Op op, NodeId a, NodeId b) {
  check_node(a, op_name(op));
  check_node(b, op_name(op));
  std::size_t la = len(a), lb = len(b);
  if (la != lb && la != 1 && lb != 1) {
    throw ContractError(std::string(op_name(op)) + ": length mismatch " +
                        std::to_string(la) + " vs " + std::to_string(lb));
  }
  std::size_t n = std::max(la, lb);
  NodeId id = push(op, a, b, n);
  const double* xa = val_ptr(a.v);
  const double* xb = val_ptr(b.v);
  double* out = val_ptr(id.v);
  auto ea = [&](std::size_t i) { return la == 1 ? xa[0] : xa[i]; };
  auto eb = [&](std::size_t i) { return lb == 1 ? xb[0] : xb[i]; };
  switch (op) {
    case Op::kAdd:
      if (la == lb) { K().add(xa, xb, out, n); break; }
      for (std::size_t i = 0; i < n; ++i) out[i] = ea(i) + eb(i);
      break;
    case Op::kSub:
      if (la == lb) { K().sub(xa, xb, out, n); break; }
      for (std::size_t i = 0; i < n; ++i) out[i] = ea(i) - eb(i);
      break;
    case Op::kMul:
      if (la == lb) { K().mul(xa, xb, out, n); break; }
      for (std::size_t i = 0; i < n; ++i) out[i] = ea(i) * eb(i);
      break;
    case Op::kDiv:
      for (std::size_t i = 0; i < n; ++i) {
        if (eb(i) == 0.0) fail(id.v, "division by zero");
      }
      if (la == lb) { K().div(xa, xb, out, n); break; }
      for (std::size_t i = 0; i < n; ++i) out[i] = ea(i) / eb(i);
      break;
    case Op::kMin:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::min(ea(i), eb(i));
      break;
    case Op::kMax:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::max(ea(i), eb(i));
      break;
    default:
      throw ContractError("binary_ew: not an elementwise op");
  }
  return id;
}

NodeId Tape::add(NodeId a, NodeId b) { return binary_ew(Op::kAdd, a, b); }
NodeId Tape::sub(NodeId a, NodeId b) { return binary_ew(Op::kSub, a, b); }
NodeId Tape::mul(NodeId a, NodeId b) { return binary_ew(Op::kMul, a, b); }
NodeId Tape::div(NodeId a, NodeId b) { return binary_ew(Op::kDiv, a, b); }
NodeId Tape::min(NodeId a, NodeId b) { return binary_ew(Op::kMin, a, b); }
NodeId Tape::max(NodeId a, NodeId b) { return binary_ew(Op::kMax, a, b); }

NodeId Tape::neg(NodeId a) {
  check_node(a, "neg");
  NodeId id = push(Op::kNeg, a, NodeId{}, len(a));
  K().scale(-1.0, val_ptr(a.v), val_ptr(id.v), len(a));
  return id;
}

NodeId Tape::exp(NodeId a) {
  check_node(a, "exp");
  NodeId id = push(Op::kExp, a, NodeId{}, len(a));
  const double* x = val_ptr(a.v);
  double* out = val_ptr(id.v);
  for (std::size_t i = 0; i < len(a); ++i) out[i] = std::exp(x[i]);
  return id;
}

NodeId Tape::log(NodeId a) {
  check_node(a, "log");
  NodeId id = push(Op::kLog, a, NodeId{}, len(a));
  const double* x = val_ptr(a.v);
  double* out = val_ptr(id.v);
  for (std::size_t i = 0; i < len(a); ++i) {
    if (!(x[i] > 0.0)) fail(id.v, "log of non-positive value");
    out[i] = std::log(x[i]);
  }
  return id;
}

NodeId Tape::tanh(NodeId a) {
  check_node(a, "tanh");
  NodeId id = push(Op::kTanh, a, NodeId{}, len(a));
  const double* x = val_ptr(a.v);
  double* out = val_ptr(id.v);
  for (std::size_t i = 0; i < len(a); ++i) out[i] = std::tanh(x[i]);
  return id;
}

NodeId Tape::sigmoid(NodeId a) {
  check_node(a, "sigmoid");
  NodeId id = push(Op::kSigmoid, a, NodeId{}, len(a));
  const double* x = val_ptr(a.v);
  double* out = val_ptr(id.v);
  for (std::size_t i = 0; i < len(a); ++i) out[i] = stable_sigmoid(x[i]);
  return id;
}

NodeId Tape::dot(NodeId a, NodeId b) {
  check_node(a, "dot");
  check_node(b, "dot");
  if (len(a) != len(b)) {
    throw ContractError("dot: length mismatch " + std::to_string(len(a)) +
                        " vs " + std::to_string(len(b)));
  }
  NodeId id = push(Op::kDot, a, b, 1);
  *val_ptr(id.v) = K().dot(val_ptr(a.v), val_ptr(b.v), len(a));
  return id;
}

NodeId Tape::sum(NodeId a) {
  check_node(a, "sum");
  NodeId id = push(Op::kSum, a, NodeId{}, 1);
  *val_ptr(id.v) = K().sum(val_ptr(a.v), len(a));
  return id;
}

NodeId Tape::softmax(NodeId a) {
  check_node(a, "softmax");
  std::size_t n = len(a);
  NodeId id = push(Op::kSoftmax, a, NodeId{}, n);
  const double* x = val_ptr(a.v);
  double* out = val_ptr(id.v);
  double m = K().max(x, n);  // max-shift
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(x[i] - m);
    z += out[i];
  }
  K().scale(1.0 / z, out, out, n);
  return id;
}

NodeId Tape::log_softmax(NodeId a) {
  check_node(a, "log-softmax");
  std::size_t n = len(a);
  NodeId id = push(Op::kLogSoftmax, a, NodeId{}, n);
  const double* x = val_ptr(a.v);
  double* out = val_ptr(id.v);
  double m = K().max(x, n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(x[i] - m);
  double lz = m + std::log(z);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - lz;
  return id;
}

NodeId Tape::clamp(NodeId a, double lo, double hi) {
  check_node(a, "clamp");
  if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
  NodeId id = push(Op::kClamp, a, NodeId{}, len(a));
  nodes_[id.v].aux0 = lo;
  nodes_[id.v].aux1 = hi;
  const double* x = val_ptr(a.v);
  double* out = val_ptr(id.v);
  for (std::size_t i = 0; i < len(a); ++i) out[i] = std::clamp(x[i], lo, hi);
  return id;
}

NodeId Tape::square(NodeId a) {
  check_node(a, "square");
  NodeId id = push(Op::kSquare, a, NodeId{}, len(a));
  K().mul(val_ptr(a.v), val_ptr(a.v), val_ptr(id.v), len(a));
  return id;
}

NodeId Tape::matvec(NodeId m, NodeId x, std::size_t rows, std::size_t cols) {
  check_node(m, "matvec");
  check_node(x, "matvec");
  if (len(m) != rows * cols) {
    throw ContractError("matvec: matrix node has " + std::to_string(len(m)) +
                        " values, expected " + std::to_string(rows * cols));
  }
  if (len(x) != cols) {
    throw ContractError("matvec: vector length " + std::to_string(len(x)) +
                        " != cols " + std::to_string(cols));
  }
  NodeId id = push(Op::kMatvec, m, x, rows);
  nodes_[id.v].aux0 = static_cast<double>(cols);
  K().gemv(val_ptr(m.v), rows, cols, val_ptr(x.v), val_ptr(id.v));
  return id;
}

NodeId Tape::pick(NodeId a, std::size_t index) {
  check_node(a, "pick");
  if (index >= len(a)) {
    throw ContractError("pick: index " + std::to_string(index) +
                        " out of range for length " + std::to_string(len(a)));
  }
  NodeId id = push(Op::kPick, a, NodeId{}, 1);
  nodes_[id.v].aux0 = static_cast<double>(index);
  *val_ptr(id.v) = val_ptr(a.v)[index];
  return id;
}

std::span<const double> Tape::value(NodeId n) const {
  check_node(n, "value");
  return {val_ptr(n.v), nodes_[n.v].len};
}

double Tape::value_scalar(NodeId n) const {
  check_node(n, "value_scalar");
  if (nodes_[n.v].len != 1) {
    throw ContractError("value_scalar on vector node of length " +
                        std::to_string(nodes_[n.v].len));
  }
  return *val_ptr(n.v);
}

std::span<const double> Tape::grad(NodeId n) const {
  check_node(n, "grad");
  if (!has_grads_) throw ContractError("grad read before backward");
  return {adjoints_.data() + nodes_[n.v].val_off, nodes_[n.v].len};
}

void Tape::reset() {
  nodes_.clear();
  values_.clear();
  adjoints_.clear();
  has_grads_ = false;
}

void Tape::backward(NodeId output) {
  check_node(output, "backward");
  if (nodes_[output.v].len != 1) {
    throw ContractError("backward: output must be scalar, node has length " +
                        std::to_string(nodes_[output.v].len));
  }
  adjoints_.assign(values_.size(), 0.0);
  has_grads_ = true;
  adjoints_[nodes_[output.v].val_off] = 1.0;

  for (std::uint32_t idx = output.v + 1; idx-- > 0;) {
    const Node& n = nodes_[idx];
    const double* g = adjoints_.data() + n.val_off;
    std::size_t ln = n.len;
    if (n.op == Op::kLeaf || n.op == Op::kConst) continue;

    std::size_t la = nodes_[n.a].len;
    const double* va = val_ptr(n.a);
    double* ga = adj_ptr(n.a);
    const double* out = val_ptr(idx);

    auto bcast_acc = [&](double* dst, std::size_t dst_len, auto term) {
      // Accumulate term(i) into dst honoring scalar broadcast.
      if (dst_len == ln) {
        for (std::size_t i = 0; i < ln; ++i) dst[i] += term(i);
      } else {  // dst_len == 1
        double acc = 0.0;
        for (std::size_t i = 0; i < ln; ++i) acc += term(i);
        dst[0] += acc;
      }
    };

    switch (n.op) {
      case Op::kAdd: {
        double* gb = adj_ptr(n.b);
        std::size_t lb = nodes_[n.b].len;
        bcast_acc(ga, la, [&](std::size_t i) { return g[i]; });
        bcast_acc(gb, lb, [&](std::size_t i) { return g[i]; });
        break;
      }
      case Op::kSub: {
        double* gb = adj_ptr(n.b);
        std::size_t lb = nodes_[n.b].len;
        bcast_acc(ga, la, [&](std::size_t i) { return g[i]; });
        bcast_acc(gb, lb, [&](std::size_t i) { return -g[i]; });
        break;
      }
      case Op::kMul: {
        double* gb = adj_ptr(n.b);
        std::size_t lb = nodes_[n.b].len;
        const double* vb = val_ptr(n.b);
        auto ea = [&](std::size_t i) { return la == 1 ? va[0] : va[i]; };
        auto eb = [&](std::size_t i) { return lb == 1 ? vb[0] : vb[i]; };
        bcast_acc(ga, la, [&](std::size_t i) { return g[i] * eb(i); });
        bcast_acc(gb, lb, [&](std::size_t i) { return g[i] * ea(i); });
        break;
      }
      case Op::kDiv: {
        double* gb = adj_ptr(n.b);
        std::size_t lb = nodes_[n.b].len;
        const double* vb = val_ptr(n.b);
        auto eb = [&](std::size_t i) { return lb == 1 ? vb[0] : vb[i]; };
        bcast_acc(ga, la, [&](std::size_t i) { return g[i] / eb(i); });
        bcast_acc(gb, lb,
                  [&](std::size_t i) { return -g[i] * out[i] / eb(i); });
        break;
      }
      case Op::kMin:
      case Op::kMax: {
        double* gb = adj_ptr(n.b);
        std::size_t lb = nodes_[n.b].len;
        const double* vb = val_ptr(n.b);
        auto ea = [&](std::size_t i) { return la == 1 ? va[0] : va[i]; };
        auto eb = [&](std::size_t i) { return lb == 1 ? vb[0] : vb[i]; };
        bool take_min = n.op == Op::kMin;
        // Ties route the gradient to the first operand.
        bcast_acc(ga, la, [&](std::size_t i) {
          bool a_wins = take_min ? ea(i) <= eb(i) : ea(i) >= eb(i);
          return a_wins ? g[i] : 0.0;
        });
        bcast_acc(gb, lb, [&](std::size_t i) {
          bool a_wins = take_min ? ea(i) <= eb(i) : ea(i) >= eb(i);
          return a_wins ? 0.0 : g[i];
        });
        break;
      }
      case Op::kNeg:
        kernels::active().axpy(-1.0, g, ga, ln);
        break;
      case Op::kExp:
        for (std::size_t i = 0; i < ln; ++i) ga[i] += g[i] * out[i];
        break;
      case Op::kLog:
        for (std::size_t i = 0; i < ln; ++i) ga[i] += g[i] / va[i];
        break;
      case Op::kTanh:
        for (std::size_t i = 0; i < ln; ++i) {
          ga[i] += g[i] * (1.0 - out[i] * out[i]);
        }
        break;
      case Op::kSigmoid:
        for (std::size_t i = 0; i < ln; ++i) {
          ga[i] += g[i] * out[i] * (1.0 - out[i]);
        }
        break;
      case Op::kDot: {
        double* gb = adj_ptr(n.b);
        const double* vb = val_ptr(n.b);
        kernels::active().axpy(g[0], vb, ga, la);
        kernels::active().axpy(g[0], va, gb, la);
        break;
      }
      case Op::kSum:
        for (std::size_t i = 0; i < la; ++i) ga[i] += g[0];
        break;
      case Op::kSoftmax: {
        double gp = kernels::active().dot(g, out, ln);
        for (std::size_t i = 0; i < ln; ++i) ga[i] += out[i] * (g[i] - gp);
        break;
      }
      case Op::kLogSoftmax: {
        double gs = kernels::active().sum(g, ln);
        for (std::size_t i = 0; i < ln; ++i) {
          ga[i] += g[i] - std::exp(out[i]) * gs;
        }
        break;
      }
      case Op::kClamp:
        for (std::size_t i = 0; i < ln; ++i) {
          if (va[i] > n.aux0 && va[i] < n.aux1) ga[i] += g[i];
        }
        break;
      case Op::kSquare:
        for (std::size_t i = 0; i < ln; ++i) ga[i] += 2.0 * g[i] * va[i];
        break;
      case Op::kMatvec: {
        std::size_t rows = ln;
        std::size_t cols = static_cast<std::size_t>(n.aux0);
        double* gb = adj_ptr(n.b);
        const double* vb = val_ptr(n.b);
        kernels::active().ger(1.0, g, vb, ga, rows, cols);
        // gb += A^T g
        for (std::size_t r = 0; r < rows; ++r) {
          kernels::active().axpy(g[r], va + r * cols, gb, cols);
        }
        break;
      }
      case Op::kPick:
        ga[static_cast<std::size_t>(n.aux0)] += g[0];
        break;
      case Op::kLeaf:
      case Op::kConst:
        break;
    }
  }
}

// ------------------------------------------------------------- BoundParams

BoundParams BoundParams::bind(Tape& tape, const ParamSet& ps) {
  BoundParams bp;
  bp.params = &ps;
  bp.nodes.reserve(ps.entry_count());
  for (std::size_t i = 0; i < ps.entry_count(); ++i) {
    bp.nodes.push_back(tape.leaf(ps.values(i)));
  }
  return bp;
}

NodeId BoundParams::node(std::string_view name) const {
  for (std::size_t i = 0; i < params->entry_count(); ++i) {
    if (params->entry(i).name == name) return nodes[i];
  }
  throw ContractError("BoundParams: unknown parameter " + std::string(name));
}

void BoundParams::collect(const Tape& tape, std::span<double> grad_out) const {
  if (grad_out.size() != params->size()) {
    throw ContractError("collect: gradient buffer has wrong size");
  }
  for (std::size_t i = 0; i < params->entry_count(); ++i) {
    const ParamSet::Entry& e = params->entry(i);
    std::span<const double> g = tape.grad(nodes[i]);
    kernels::active().axpy(1.0, g.data(), grad_out.data() + e.offset, e.size);
  }
}

}  // namespace diprl::ad
