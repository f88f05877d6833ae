#include "mlmlab/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace mlmlab {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kParameter: return "parameter";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kAddPositionRows: return "add_position_rows";
    case OpKind::kScale: return "scale";
    case OpKind::kGelu: return "gelu";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kSoftmaxMasked: return "softmax_masked";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kSplitHeads: return "split_heads";
    case OpKind::kMergeHeads: return "merge_heads";
    case OpKind::kDropout: return "dropout";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kSum: return "sum";
  }
  return "unknown";
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(NodeId id) const {
  if (id.index >= nodes_.size()) {
    throw std::out_of_range(cleared_ ? "tape: node accessed after backward cleared the tape"
                                     : "tape: node id out of range");
  }
  return nodes_[id.index];
}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(NodeId id) {
  return const_cast<Node&>(std::as_const(*this).node(id));
}

template <typename T>
NodeId Tape<T>::push(Node n) {
  if (cleared_) throw std::logic_error("tape: recording on a tape that already ran backward");
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
NodeId Tape<T>::parameter(Tensor<T>& param) {
  Tensor<T> copy(param.shape(), std::vector<T>(param.values().begin(), param.values().end()));
  return push(Node{OpKind::kParameter, std::move(copy), {}, {}, {}, &param,
                   grad_enabled_ && param.requires_grad()});
}

template <typename T>
NodeId Tape<T>::constant(Tensor<T> value) {
  value.set_requires_grad(false);
  return push(Node{OpKind::kConstant, std::move(value), {}, {}, {}, nullptr, false});
}

template <typename T>
NodeId Tape<T>::record(OpKind kind, Tensor<T> value, std::vector<NodeId> inputs,
                       BackwardFn backward) {
  // v·0 is NaN exactly when v is NaN or ±Inf; the sum vectorizes.
  T probe = 0;
  const T* data = value.data();
  const std::size_t count = value.numel();
#pragma omp simd reduction(+ : probe)
  for (std::size_t i = 0; i < count; ++i) probe += data[i] * T{0};
  if (probe != probe) {
    throw NumericError("non-finite value produced by " + std::string(op_name(kind)));
  }
  bool needs = false;
  if (grad_enabled_) {
    for (NodeId in : inputs) needs = needs || node(in).needs_grad;
  }
  if (!needs) backward = nullptr;
  return push(Node{kind, std::move(value), {}, std::move(inputs), std::move(backward), nullptr, needs});
}

template <typename T>
std::span<T> Tape<T>::grad(NodeId id) {
  Node& n = node(id);
  if (n.grad.empty()) n.grad.assign(n.value.numel(), T{0});
  return n.grad;
}

template <typename T>
void Tape<T>::backward(NodeId loss) {
  if (cleared_) throw std::logic_error("tape: backward called twice on one recording");
  if (!grad_enabled_) throw std::logic_error("tape: backward on a no-grad tape");
  if (node(loss).value.numel() != 1) {
    throw ShapeError("tape: backward needs a scalar loss, got shape " +
                     shape_to_string(node(loss).value.shape()));
  }
  grad(loss)[0] = T{1};
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.param != nullptr) {
      std::span<T> dst = n.param->grad();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += n.grad[j];
    } else if (n.backward) {
      n.backward(*this, n.value, n.grad);
    }
  }
  nodes_.clear();
  nodes_.shrink_to_fit();
  cleared_ = true;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace mlmlab
