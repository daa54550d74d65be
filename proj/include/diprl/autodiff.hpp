#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diprl/errors.hpp"

namespace diprl::ad {

// Named flat parameter arrays with shape metadata and a fixed global order
// (insertion order). flatten/unflatten are the identity on the backing store.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset;
    std::size_t size;
  };

  std::size_t add(std::string name, std::vector<std::size_t> shape);

  std::size_t entry_count() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  const Entry& entry(std::string_view name) const;
  bool has(std::string_view name) const;

  std::span<double> values(std::size_t i) {
    return {data_.data() + entries_[i].offset, entries_[i].size};
  }
  std::span<const double> values(std::size_t i) const {
    return {data_.data() + entries_[i].offset, entries_[i].size};
  }
  std::span<double> values(std::string_view name);
  std::span<const double> values(std::string_view name) const;

  std::size_t size() const { return data_.size(); }
  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  std::vector<double> flatten() const { return data_; }
  void unflatten(std::span<const double> flat_values);

 private:
  std::vector<Entry> entries_;
  std::vector<double> data_;
};

enum class Op : std::uint8_t {
  kLeaf,
  kConst,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kExp,
  kLog,
  kTanh,
  kSigmoid,
  kDot,
  kSum,
  kSoftmax,
  kLogSoftmax,
  kClamp,
  kSquare,
  kMatvec,
  kPick,
  kMin,
  kMax,
};

const char* op_name(Op op);

struct NodeId {
  std::uint32_t v = 0xffffffffu;
  bool valid() const { return v != 0xffffffffu; }
};

// Reverse-mode tape over scalar and dense-vector nodes. Values are computed
// at record time; node inputs always refer to earlier nodes. Binary
// elementwise ops broadcast a length-1 operand against a vector.
class Tape {
 public:
  NodeId leaf(std::span<const double> values);
  NodeId leaf(double value) { return leaf(std::span<const double>(&value, 1)); }
  NodeId constant(std::span<const double> values);
  NodeId constant(double value) {
    return constant(std::span<const double>(&value, 1));
  }

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId neg(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId dot(NodeId a, NodeId b);
  NodeId sum(NodeId a);
  NodeId softmax(NodeId a);
  NodeId log_softmax(NodeId a);
  NodeId clamp(NodeId a, double lo, double hi);
  NodeId square(NodeId a);
  // m holds rows*cols values row-major; result = m * x, length rows.
  NodeId matvec(NodeId m, NodeId x, std::size_t rows, std::size_t cols);
  NodeId pick(NodeId a, std::size_t index);
  NodeId min(NodeId a, NodeId b);
  NodeId max(NodeId a, NodeId b);

  std::size_t len(NodeId n) const { return nodes_[n.v].len; }
  std::span<const double> value(NodeId n) const;
  double value_scalar(NodeId n) const;

  // Seeds d(output)=1 and accumulates adjoints for every node reachable from
  // it; other nodes keep adjoint 0. Output must be scalar.
  void backward(NodeId output);
  std::span<const double> grad(NodeId n) const;

  std::size_t node_count() const { return nodes_.size(); }
  void reset();

 private:
  struct Node {
    Op op;
    std::uint32_t a = 0xffffffffu;
    std::uint32_t b = 0xffffffffu;
    std::uint32_t val_off = 0;
    std::uint32_t len = 0;
    double aux0 = 0.0;  // clamp lo / pick index / matvec cols
    double aux1 = 0.0;  // clamp hi
  };

  NodeId push(Op op, NodeId a, NodeId b, std::size_t len);
  double* val_ptr(std::uint32_t idx) { return values_.data() + nodes_[idx].val_off; }
  const double* val_ptr(std::uint32_t idx) const {
    return values_.data() + nodes_[idx].val_off;
  }
  double* adj_ptr(std::uint32_t idx) { return adjoints_.data() + nodes_[idx].val_off; }

  NodeId binary_ew(Op op, NodeId a, NodeId b);
  void check_node(NodeId n, const char* what) const;
  [[noreturn]] void fail(std::uint32_t node, const std::string& msg) const;

  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> adjoints_;
  bool has_grads_ = false;
};

// Ties ParamSet entries to tape leaves so gradients can be read back in the
// parameter set's flat layout.
struct BoundParams {
  const ParamSet* params = nullptr;
  std::vector<NodeId> nodes;  // one per entry

  static BoundParams bind(Tape& tape, const ParamSet& ps);
  NodeId node(std::string_view name) const;
  // Accumulates d(output)/d(param) into grad_out (size ps.size()).
  void collect(const Tape& tape, std::span<double> grad_out) const;
};

}  // namespace diprl::ad
