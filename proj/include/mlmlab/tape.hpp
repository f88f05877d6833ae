#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "mlmlab/tensor.hpp"

namespace mlmlab {

struct NodeId {
  std::uint32_t index = 0;
  friend auto operator<=>(NodeId, NodeId) = default;
};

enum class OpKind : std::uint8_t {
  kParameter,
  kConstant,
  kMatMul,
  kAdd,
  kAddBias,
  kAddPositionRows,
  kScale,
  kGelu,
  kLayerNorm,
  kSoftmaxMasked,
  kEmbedding,
  kSplitHeads,
  kMergeHeads,
  kDropout,
  kGatherRows,
  kCrossEntropy,
  kSum,
};

std::string_view op_name(OpKind kind);

// Records a forward computation as an append-only list of nodes and replays
// it in reverse for gradients. Nodes are appended after their inputs, so the
// list is its own topological order. A tape supports exactly one backward
// pass; afterwards it is cleared and refuses further use until reset().
//
// With grad disabled the tape still stores values (the model code path is the
// same) but keeps no backward closures.
template <typename T>
class Tape {
 public:
  using BackwardFn =
      std::function<void(Tape&, const Tensor<T>& out_value, std::span<const T> out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  // Leaf bound to a parameter; backward() accumulates into param.grad() when
  // the parameter requires grad. The parameter must outlive the backward pass.
  NodeId parameter(Tensor<T>& param);
  NodeId constant(Tensor<T> value);

  // Appends an op result. Throws NumericError if any value is non-finite.
  NodeId record(OpKind kind, Tensor<T> value, std::vector<NodeId> inputs, BackwardFn backward);

  const Tensor<T>& value(NodeId id) const { return node(id).value; }
  bool needs_grad(NodeId id) const { return node(id).needs_grad; }
  OpKind kind(NodeId id) const { return node(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return node(id).inputs; }

  // Gradient buffer of a node, allocated on first access. Valid during backward.
  std::span<T> grad(NodeId id);

  std::size_t size() const { return nodes_.size(); }
  bool cleared() const { return cleared_; }

  // Reverse sweep from a scalar node; seeds d(loss)/d(loss) = 1.
  void backward(NodeId loss);

  void reset() {
    nodes_.clear();
    cleared_ = false;
  }

 private:
  struct Node {
    OpKind kind;
    Tensor<T> value;
    std::vector<T> grad;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    Tensor<T>* param = nullptr;
    bool needs_grad = false;
  };

  const Node& node(NodeId id) const;
  Node& node(NodeId id);
  NodeId push(Node n);

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool cleared_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mlmlab
