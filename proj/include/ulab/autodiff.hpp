#pragma once

// Tape-based reverse-mode automatic differentiation over dense tensors.
//
// A Graph records every operation in insertion order. Inputs always precede
// outputs, so the tape is acyclic by construction and backward() is a single
// reverse sweep. A graph is differentiated at most once.
//
// Broadcasting is limited to adding a row vector to every row of a matrix
// (add_row); every other shape mismatch raises Error("shape_mismatch").
// Every forward result is checked for NaN/Inf and raises Error("non_finite").

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ulab/tensor.hpp"

namespace ulab {

using NodeId = std::int32_t;

enum class OpKind : std::uint8_t {
  kLeaf,
  kGather,
  kMatMul,
  kTranspose,
  kAdd,
  kAddRow,
  kMul,
  kScale,
  kAddScalar,
  kLog,
  kPow,
  kGelu,
  kCausalSoftmax,
  kLayerNorm,
  kCrossEntropy,
  kKlDivergence,
  kSliceRows,
  kConcatRows,
  kSum,
  kMean,
};

std::string_view op_name(OpKind op);

template <typename Scalar>
class Graph;

// Lightweight handle to a node of a graph. Copyable; does not own anything.
template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  NodeId id = -1;

  bool valid() const noexcept { return graph != nullptr && id >= 0; }
  const BasicTensor<Scalar>& value() const;
  const BasicTensor<Scalar>& grad() const;
};

template <typename Scalar>
class Graph {
 public:
  using TensorT = BasicTensor<Scalar>;

  struct Node {
    OpKind op = OpKind::kLeaf;
    std::vector<NodeId> inputs;
    TensorT value;
    const TensorT* external = nullptr;  // non-owning leaf storage
    TensorT saved;                      // op-specific forward state
    std::vector<int> indices;           // gather rows / targets / slice bounds
    Scalar param = Scalar(0);
    bool requires_grad = false;

    const TensorT& output() const { return external ? *external : value; }
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var<Scalar> leaf(TensorT value, bool requires_grad = false);
  // Leaf that references caller-owned storage; `value` must outlive the graph.
  Var<Scalar> leaf_ref(const TensorT& value, bool requires_grad = false);

  const TensorT& value(NodeId id) const { return nodes_.at(id).output(); }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  // Populates gradients of the scalar `root` with respect to every node that
  // requires a gradient. Leaves that do not participate get zeros.
  void backward(Var<Scalar> root);

  // Gradient of the root with respect to node `id`; only valid after backward.
  const TensorT& grad(NodeId id) const;

  // Appends a computed node; used by the operation implementations.
  Var<Scalar> record(Node node);
  const Node& node(NodeId id) const { return nodes_.at(id); }

 private:
  std::vector<Node> nodes_;
  std::vector<TensorT> grads_;
  bool consumed_ = false;
};

template <typename Scalar>
const BasicTensor<Scalar>& Var<Scalar>::value() const {
  return graph->value(id);
}

template <typename Scalar>
const BasicTensor<Scalar>& Var<Scalar>::grad() const {
  return graph->grad(id);
}

// Rows of `table` selected by `rows`: out[i] = table[rows[i]].
template <typename Scalar>
Var<Scalar> gather(Var<Scalar> table, std::span<const int> rows);

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b);

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a);

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b);

// Adds the row vector `v` (shape [n] or [1 x n]) to each row of `a` (m x n).
template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> a, Var<Scalar> v);

// Elementwise product of equally shaped tensors.
template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b);

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar factor);

template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> a, Scalar c);

// Natural log; inputs must be strictly positive.
template <typename Scalar>
Var<Scalar> log(Var<Scalar> a);

// a^p elementwise; inputs must be strictly positive.
template <typename Scalar>
Var<Scalar> pow(Var<Scalar> a, Scalar p);

// Tanh-approximated GELU.
template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> a);

// Row softmax of an m x n score matrix under an additive causal mask: row i
// may attend to columns j <= i + (n - m); masked entries get probability 0.
template <typename Scalar>
Var<Scalar> causal_softmax(Var<Scalar> scores);

// Row-wise layer normalization with learned gain and bias (both length n).
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gain, Var<Scalar> bias, Scalar eps = Scalar(1e-5));

// Mean over rows of -log softmax(logits[i])[targets[i]]; fused for stability.
template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> logits, std::span<const int> targets);

// Mean over rows of KL(softmax(logits[i]) || exp(ref_logprobs[i])). The
// reference log-probabilities are constants.
template <typename Scalar>
Var<Scalar> kl_divergence(Var<Scalar> logits, const BasicTensor<Scalar>& ref_logprobs);

// Rows [begin, end).
template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, int begin, int end);

template <typename Scalar>
Var<Scalar> concat_rows(std::span<const Var<Scalar>> parts);

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a);

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> a);

// Row-wise log-softmax without recording (used for reference caches).
template <typename Scalar>
BasicTensor<Scalar> log_softmax_rows(const BasicTensor<Scalar>& logits);

}  // namespace ulab
