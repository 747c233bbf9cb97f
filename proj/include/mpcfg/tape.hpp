#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mpcfg/tensor.hpp"

namespace mpcfg {

class Tape;

// Handle to a node on a tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddConst,
  kNeg,
  kMatmul,
  kTranspose,
  kDot,
  kConcat,
  kReshape,
  kIndexSelect,
  kSliceRows,
  kRelu,
  kExp,
  kLog,
  kSigmoid,
  kTanh,
  kMaxPool,
  kMean,
  kSum,
  kSumAll,
  kLogSoftmax,
  kLogSumExp,
  kOuterAdd,
  kCosine,
  kL2Normalize,
};

const char* op_name(OpKind k);

struct Node {
  OpKind kind;
  std::vector<int> inputs;
  Tensor value;
  Tensor grad;  // allocated during backward
  bool requires_grad = false;
  std::function<void(Tape&, int)> backward_fn;  // adds into input grads
};

// Reverse-mode autodiff graph. Nodes are appended in topological order
// (operands always precede results); backward visits each node exactly
// once in reverse order. Single-threaded by construction.
class Tape {
 public:
  Var leaf(const Tensor& t);
  Var leaf(const Tensor& t, bool requires_grad);
  Var constant(const Tensor& t) { return leaf(t, false); }

  const Tensor& value(Var v) const { return node(v).value; }
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  // Runs reverse accumulation from `loss` (must be a single-element
  // tensor). Gradients of all requires_grad nodes are available via
  // grad() afterwards; nodes with no path to the loss get zeros.
  void backward(Var loss);

  size_t size() const { return nodes_.size(); }

  // Finiteness guard: every forward op checks its output and throws
  // NonFiniteError naming the op. On by default.
  void set_check_finite(bool b) { check_finite_ = b; }

  Node& node(Var v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw std::runtime_error("invalid tape handle");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw std::runtime_error("invalid tape handle");
    return nodes_[v.id];
  }

  // Used by op implementations.
  Var push(OpKind kind, std::vector<int> inputs, Tensor value,
           std::function<void(Tape&, int)> backward_fn);

 private:
  std::vector<Node> nodes_;
  bool check_finite_ = true;
};

// ---- Forward ops (free functions; all record a node on the tape) ----

// Elementwise add/sub/mul with limited broadcasting: identical shapes,
// matrix + row vector, matrix + column-shaped vector is not supported
// directly (use outer_add), and anything + scalar.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
// a / b with b a scalar or of identical shape.
Var div(Tape& t, Var a, Var b);

Var scale(Tape& t, Var a, double c);
Var add_const(Tape& t, Var a, double c);
Var neg(Tape& t, Var a);

// (m,k)x(k,n)->(m,n); (m,k)x(k)->(m); (k)x(k,n)->(n).
Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);
Var dot(Tape& t, Var a, Var b);

// axis 0: stacks inputs as rows (rank-1 inputs count as single rows).
// axis 1: concatenates columns; all-rank-1 inputs yield a longer vector.
Var concat(Tape& t, const std::vector<Var>& vs, int axis);
Var reshape(Tape& t, Var a, const std::vector<int>& shape);

// Gathers rows (axis 0) or columns (axis 1); indices may repeat.
Var index_select(Tape& t, Var a, int axis, const std::vector<int>& indices);
// Row gather from an embedding table: (vocab,d) x ids -> (len,d).
Var embedding_lookup(Tape& t, Var table, const std::vector<int>& ids);
// Contiguous row range [r0, r1).
Var slice_rows(Tape& t, Var a, int r0, int r1);

Var relu(Tape& t, Var a);
// Scalar max-with-zero; same forward/backward as relu, kept as the
// named hinge building block.
inline Var hinge(Tape& t, Var a) { return relu(t, a); }
Var exp(Tape& t, Var a);
Var log(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var tanh(Tape& t, Var a);

// Reductions over an axis of a matrix (axis 0: down columns, axis 1:
// across rows); rank-1 input reduces to a scalar regardless of axis.
// max_pool routes the gradient to the first maximal index on ties.
Var max_pool(Tape& t, Var a, int axis);
Var mean(Tape& t, Var a, int axis);
Var sum(Tape& t, Var a, int axis);
Var sum_all(Tape& t, Var a);

// Numerically stabilized (per-row / per-slice maximum subtracted).
Var log_softmax(Tape& t, Var a);  // rank-1, or rank-2 per row
Var logsumexp(Tape& t, Var a, int axis);

// out[i,j] = u[i] + v[j].
Var outer_add(Tape& t, Var u, Var v);

Var cosine(Tape& t, Var a, Var b);
Var l2_normalize(Tape& t, Var a);

}  // namespace mpcfg
