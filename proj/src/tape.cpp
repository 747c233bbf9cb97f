#include "mpcfg/tape.hpp"

#include <algorithm>
#include <cmath>

namespace mpcfg {

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kScale: return "scale";
    case OpKind::kAddConst: return "add_const";
    case OpKind::kNeg: return "neg";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kDot: return "dot";
    case OpKind::kConcat: return "concat";
    case OpKind::kReshape: return "reshape";
    case OpKind::kIndexSelect: return "index_select";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kRelu: return "relu";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kMaxPool: return "max_pool";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kSumAll: return "sum_all";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kLogSumExp: return "logsumexp";
    case OpKind::kOuterAdd: return "outer_add";
    case OpKind::kCosine: return "cosine";
    case OpKind::kL2Normalize: return "l2_normalize";
  }
  return "?";
}

Var Tape::push(OpKind kind, std::vector<int> inputs, Tensor value,
               std::function<void(Tape&, int)> backward_fn) {
  if (check_finite_ && !value.all_finite())
    throw NonFiniteError(std::string("non-finite value produced by op '") + op_name(kind) + "'");
  Node n;
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.backward_fn = std::move(backward_fn);
  n.requires_grad = false;
  for (int id : n.inputs)
    if (nodes_[id].requires_grad) n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(const Tensor& t) { return leaf(t, t.requires_grad()); }

Var Tape::leaf(const Tensor& t, bool requires_grad) {
  if (check_finite_ && !t.all_finite())
    throw NonFiniteError("non-finite value in leaf tensor");
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = t;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!n.requires_grad) throw std::runtime_error("grad requested for a non-grad node");
  return n.grad;
}

void Tape::backward(Var loss) {
  Node& l = node(loss);
  if (l.value.numel() != 1) throw ShapeError("backward: loss is not a scalar");
  for (Node& n : nodes_) {
    if (n.requires_grad) {
      n.grad = Tensor::zeros(n.value.shape());
    }
  }
  if (!l.requires_grad) return;  // loss constant in every parameter
  l.grad.array().setConstant(1.0);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward_fn) n.backward_fn(*this, i);
  }
}

namespace {

// Adds g into the gradient of node `id` if that node tracks gradients.
void accum(Tape& t, int id, const Array2d& g) {
  Node& n = t.node(Var{id});
  if (!n.requires_grad) return;
  n.grad.array() += g;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

enum class Bcast { kSame, kRowOnB, kRowOnA, kScalarB, kScalarA };

Bcast classify_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (same_shape(a, b)) return Bcast::kSame;
  if (b.rank() == 0) return Bcast::kScalarB;
  if (a.rank() == 0) return Bcast::kScalarA;
  if (a.rank() == 2 && b.rank() == 1 && b.shape()[0] == a.shape()[1]) return Bcast::kRowOnB;
  if (b.rank() == 2 && a.rank() == 1 && a.shape()[0] == b.shape()[1]) return Bcast::kRowOnA;
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                   b.shape_str());
}

Array2d broadcast_rows(const Tensor& rowvec, long rows) {
  return rowvec.array().replicate(rows, 1);
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  Bcast bc = classify_broadcast(A, B, "add");
  Tensor out = A;
  switch (bc) {
    case Bcast::kSame: out.array() += B.array(); break;
    case Bcast::kScalarB: out.array() += B.item(); break;
    case Bcast::kScalarA:
      out = B;
      out.array() += A.item();
      break;
    case Bcast::kRowOnB: out.array() += broadcast_rows(B, A.rows()); break;
    case Bcast::kRowOnA:
      out = B;
      out.array() += broadcast_rows(A, B.rows());
      break;
  }
  out.set_requires_grad(false);
  return t.push(OpKind::kAdd, {a.id, b.id}, std::move(out), [bc](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    const Array2d& g = n.grad.array();
    int ia = n.inputs[0], ib = n.inputs[1];
    switch (bc) {
      case Bcast::kSame:
        accum(tp, ia, g);
        accum(tp, ib, g);
        break;
      case Bcast::kScalarB:
        accum(tp, ia, g);
        accum(tp, ib, Array2d::Constant(1, 1, g.sum()));
        break;
      case Bcast::kScalarA:
        accum(tp, ia, Array2d::Constant(1, 1, g.sum()));
        accum(tp, ib, g);
        break;
      case Bcast::kRowOnB:
        accum(tp, ia, g);
        accum(tp, ib, g.colwise().sum());
        break;
      case Bcast::kRowOnA:
        accum(tp, ia, g.colwise().sum());
        accum(tp, ib, g);
        break;
    }
  });
}

Var sub(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  Bcast bc = classify_broadcast(A, B, "sub");
  Tensor out;
  switch (bc) {
    case Bcast::kSame:
      out = A;
      out.array() -= B.array();
      break;
    case Bcast::kScalarB:
      out = A;
      out.array() -= B.item();
      break;
    case Bcast::kScalarA:
      out = B;
      out.array() = A.item() - out.array();
      break;
    case Bcast::kRowOnB:
      out = A;
      out.array() -= broadcast_rows(B, A.rows());
      break;
    case Bcast::kRowOnA:
      out = B;
      out.array() = broadcast_rows(A, B.rows()) - out.array();
      break;
  }
  out.set_requires_grad(false);
  return t.push(OpKind::kSub, {a.id, b.id}, std::move(out), [bc](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    const Array2d& g = n.grad.array();
    int ia = n.inputs[0], ib = n.inputs[1];
    switch (bc) {
      case Bcast::kSame:
        accum(tp, ia, g);
        accum(tp, ib, -g);
        break;
      case Bcast::kScalarB:
        accum(tp, ia, g);
        accum(tp, ib, Array2d::Constant(1, 1, -g.sum()));
        break;
      case Bcast::kScalarA:
        accum(tp, ia, Array2d::Constant(1, 1, g.sum()));
        accum(tp, ib, -g);
        break;
      case Bcast::kRowOnB:
        accum(tp, ia, g);
        accum(tp, ib, -g.colwise().sum());
        break;
      case Bcast::kRowOnA:
        accum(tp, ia, g.colwise().sum());
        accum(tp, ib, -g);
        break;
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  Bcast bc = classify_broadcast(A, B, "mul");
  Tensor out;
  switch (bc) {
    case Bcast::kSame:
      out = A;
      out.array() *= B.array();
      break;
    case Bcast::kScalarB:
      out = A;
      out.array() *= B.item();
      break;
    case Bcast::kScalarA:
      out = B;
      out.array() *= A.item();
      break;
    case Bcast::kRowOnB:
      out = A;
      out.array() *= broadcast_rows(B, A.rows());
      break;
    case Bcast::kRowOnA:
      out = B;
      out.array() *= broadcast_rows(A, B.rows());
      break;
  }
  out.set_requires_grad(false);
  return t.push(OpKind::kMul, {a.id, b.id}, std::move(out), [bc](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    const Array2d& g = n.grad.array();
    int ia = n.inputs[0], ib = n.inputs[1];
    const Array2d& Aa = tp.value(Var{ia}).array();
    const Array2d& Bb = tp.value(Var{ib}).array();
    switch (bc) {
      case Bcast::kSame:
        accum(tp, ia, g * Bb);
        accum(tp, ib, g * Aa);
        break;
      case Bcast::kScalarB:
        accum(tp, ia, g * Bb(0, 0));
        accum(tp, ib, Array2d::Constant(1, 1, (g * Aa).sum()));
        break;
      case Bcast::kScalarA:
        accum(tp, ia, Array2d::Constant(1, 1, (g * Bb).sum()));
        accum(tp, ib, g * Aa(0, 0));
        break;
      case Bcast::kRowOnB:
        accum(tp, ia, g * Bb.replicate(Aa.rows(), 1));
        accum(tp, ib, (g * Aa).colwise().sum());
        break;
      case Bcast::kRowOnA:
        accum(tp, ia, (g * Bb).colwise().sum());
        accum(tp, ib, g * Aa.replicate(Bb.rows(), 1));
        break;
    }
  });
}

Var div(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  Tensor out = A;
  bool scalar_b = B.rank() == 0;
  if (scalar_b) {
    out.array() /= B.item();
  } else if (same_shape(A, B)) {
    out.array() /= B.array();
  } else {
    throw ShapeError("div: divisor must be scalar or match shape");
  }
  out.set_requires_grad(false);
  return t.push(OpKind::kDiv, {a.id, b.id}, std::move(out), [scalar_b](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    const Array2d& g = n.grad.array();
    int ia = n.inputs[0], ib = n.inputs[1];
    const Array2d& Aa = tp.value(Var{ia}).array();
    const Array2d& Bb = tp.value(Var{ib}).array();
    if (scalar_b) {
      double s = Bb(0, 0);
      accum(tp, ia, g / s);
      accum(tp, ib, Array2d::Constant(1, 1, -(g * Aa).sum() / (s * s)));
    } else {
      accum(tp, ia, g / Bb);
      accum(tp, ib, -(g * Aa) / (Bb * Bb));
    }
  });
}

Var scale(Tape& t, Var a, double c) {
  Tensor out = t.value(a);
  out.array() *= c;
  out.set_requires_grad(false);
  return t.push(OpKind::kScale, {a.id}, std::move(out), [c](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    accum(tp, n.inputs[0], n.grad.array() * c);
  });
}

Var add_const(Tape& t, Var a, double c) {
  Tensor out = t.value(a);
  out.array() += c;
  out.set_requires_grad(false);
  return t.push(OpKind::kAddConst, {a.id}, std::move(out), [](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    accum(tp, n.inputs[0], n.grad.array());
  });
}

Var neg(Tape& t, Var a) { return scale(t, a, -1.0); }

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  Tensor out;
  if (A.rank() == 2 && B.rank() == 2) {
    if (A.shape()[1] != B.shape()[0]) throw ShapeError("matmul: inner dimensions differ");
    Array2d o = (A.array().matrix() * B.array().matrix()).array();
    out = Tensor::matrix(o);
  } else if (A.rank() == 2 && B.rank() == 1) {
    if (A.shape()[1] != B.shape()[0]) throw ShapeError("matmul: inner dimensions differ");
    Eigen::ArrayXd o = (A.array().matrix() * B.array().matrix().transpose()).array();
    out = Tensor::vector(o);
  } else if (A.rank() == 1 && B.rank() == 2) {
    if (A.shape()[0] != B.shape()[0]) throw ShapeError("matmul: inner dimensions differ");
    Eigen::ArrayXd o = (A.array().matrix() * B.array().matrix()).transpose().array();
    out = Tensor::vector(o);
  } else {
    throw ShapeError("matmul: expects rank-2 x rank-2, rank-2 x rank-1 or rank-1 x rank-2");
  }
  return t.push(OpKind::kMatmul, {a.id, b.id}, std::move(out), [](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    int ia = n.inputs[0], ib = n.inputs[1];
    const Tensor& A = tp.value(Var{ia});
    const Tensor& B = tp.value(Var{ib});
    const Array2d& g = n.grad.array();
    if (A.rank() == 2 && B.rank() == 2) {
      accum(tp, ia, (g.matrix() * B.array().matrix().transpose()).array());
      accum(tp, ib, (A.array().matrix().transpose() * g.matrix()).array());
    } else if (A.rank() == 2 && B.rank() == 1) {
      // g is 1 x m; out_i = sum_k A[i,k] b[k]
      accum(tp, ia, (g.matrix().transpose() * B.array().matrix()).array());
      accum(tp, ib, (g.matrix() * A.array().matrix()).array());
    } else {
      // A rank 1 (1 x k), B rank 2 (k x n), g is 1 x n
      accum(tp, ia, (g.matrix() * B.array().matrix().transpose()).array());
      accum(tp, ib, (A.array().matrix().transpose() * g.matrix()).array());
    }
  });
}

Var transpose(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  if (A.rank() != 2) throw ShapeError("transpose: rank-2 input required");
  Array2d o = A.array().transpose();
  return t.push(OpKind::kTranspose, {a.id}, Tensor::matrix(o), [](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    accum(tp, n.inputs[0], n.grad.array().transpose());
  });
}

Var dot(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  if (A.rank() != 1 || B.rank() != 1 || A.shape()[0] != B.shape()[0])
    throw ShapeError("dot: rank-1 inputs of equal length required");
  double v = (A.array() * B.array()).sum();
  return t.push(OpKind::kDot, {a.id, b.id}, Tensor::scalar(v), [](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    double g = n.grad.item();
    accum(tp, n.inputs[0], g * tp.value(Var{n.inputs[1]}).array());
    accum(tp, n.inputs[1], g * tp.value(Var{n.inputs[0]}).array());
  });
}

Var concat(Tape& t, const std::vector<Var>& vs, int axis) {
  if (vs.empty()) throw ShapeError("concat: no inputs");
  std::vector<int> ids;
  ids.reserve(vs.size());
  for (Var v : vs) ids.push_back(v.id);

  if (axis == 0) {
    long cols = t.value(vs[0]).cols();
    long rows = 0;
    for (Var v : vs) {
      const Tensor& x = t.value(v);
      if (x.rank() == 0 || x.cols() != cols)
        throw ShapeError("concat axis 0: column counts differ");
      rows += x.rows();
    }
    Array2d o(rows, cols);
    long r = 0;
    std::vector<long> row_counts;
    for (Var v : vs) {
      const Tensor& x = t.value(v);
      o.middleRows(r, x.rows()) = x.array();
      row_counts.push_back(x.rows());
      r += x.rows();
    }
    return t.push(OpKind::kConcat, std::move(ids), Tensor::matrix(o),
                  [row_counts](Tape& tp, int self) {
                    const Node& n = tp.node(Var{self});
                    const Array2d& g = n.grad.array();
                    long r = 0;
                    for (size_t k = 0; k < n.inputs.size(); ++k) {
                      accum(tp, n.inputs[k], g.middleRows(r, row_counts[k]));
                      r += row_counts[k];
                    }
                  });
  }
  if (axis == 1) {
    bool all_rank1 = true;
    for (Var v : vs) all_rank1 = all_rank1 && t.value(v).rank() == 1;
    if (all_rank1) {
      long total = 0;
      for (Var v : vs) total += t.value(v).cols();
      Eigen::ArrayXd o(total);
      long c = 0;
      std::vector<long> lens;
      for (Var v : vs) {
        const Tensor& x = t.value(v);
        o.segment(c, x.cols()) = x.array().row(0).transpose();
        lens.push_back(x.cols());
        c += x.cols();
      }
      return t.push(OpKind::kConcat, std::move(ids), Tensor::vector(o),
                    [lens](Tape& tp, int self) {
                      const Node& n = tp.node(Var{self});
                      const Array2d& g = n.grad.array();
                      long c = 0;
                      for (size_t k = 0; k < n.inputs.size(); ++k) {
                        accum(tp, n.inputs[k], g.middleCols(c, lens[k]));
                        c += lens[k];
                      }
                    });
    }
    long rows = t.value(vs[0]).rows();
    long cols = 0;
    for (Var v : vs) {
      const Tensor& x = t.value(v);
      if (x.rank() != 2 || x.rows() != rows)
        throw ShapeError("concat axis 1: row counts differ");
      cols += x.cols();
    }
    Array2d o(rows, cols);
    long c = 0;
    std::vector<long> col_counts;
    for (Var v : vs) {
      const Tensor& x = t.value(v);
      o.middleCols(c, x.cols()) = x.array();
      col_counts.push_back(x.cols());
      c += x.cols();
    }
    return t.push(OpKind::kConcat, std::move(ids), Tensor::matrix(o),
                  [col_counts](Tape& tp, int self) {
                    const Node& n = tp.node(Var{self});
                    const Array2d& g = n.grad.array();
                    long c = 0;
                    for (size_t k = 0; k < n.inputs.size(); ++k) {
                      accum(tp, n.inputs[k], g.middleCols(c, col_counts[k]));
                      c += col_counts[k];
                    }
                  });
  }
  throw ShapeError("concat: axis must be 0 or 1");
}

Var reshape(Tape& t, Var a, const std::vector<int>& shape) {
  const Tensor& A = t.value(a);
  Tensor out = Tensor::zeros(shape);
  if (out.numel() != A.numel()) throw ShapeError("reshape: element count mismatch");
  std::copy(A.data(), A.data() + A.numel(), out.data());
  std::vector<int> old_shape = A.shape();
  return t.push(OpKind::kReshape, {a.id}, std::move(out), [old_shape](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    Tensor back = Tensor::zeros(old_shape);
    std::copy(n.grad.data(), n.grad.data() + n.grad.numel(), back.data());
    accum(tp, n.inputs[0], back.array());
  });
}

Var index_select(Tape& t, Var a, int axis, const std::vector<int>& indices) {
  const Tensor& A = t.value(a);
  if (A.rank() == 0) throw ShapeError("index_select: scalar input");
  long m = static_cast<long>(indices.size());
  if (A.rank() == 1) {
    long n = A.cols();
    Eigen::ArrayXd o(m);
    for (long k = 0; k < m; ++k) {
      if (indices[k] < 0 || indices[k] >= n) throw ShapeError("index_select: index out of range");
      o(k) = A.at(indices[k]);
    }
    return t.push(OpKind::kIndexSelect, {a.id}, Tensor::vector(o),
                  [indices, n](Tape& tp, int self) {
                    const Node& nd = tp.node(Var{self});
                    Array2d back = Array2d::Zero(1, n);
                    for (size_t k = 0; k < indices.size(); ++k)
                      back(0, indices[k]) += nd.grad.at(static_cast<long>(k));
                    accum(tp, nd.inputs[0], back);
                  });
  }
  if (axis == 0) {
    Array2d o(m, A.cols());
    for (long k = 0; k < m; ++k) {
      if (indices[k] < 0 || indices[k] >= A.rows())
        throw ShapeError("index_select: row index out of range");
      o.row(k) = A.array().row(indices[k]);
    }
    long rows = A.rows();
    return t.push(OpKind::kIndexSelect, {a.id}, Tensor::matrix(o),
                  [indices, rows](Tape& tp, int self) {
                    const Node& nd = tp.node(Var{self});
                    const Array2d& g = nd.grad.array();
                    Array2d back = Array2d::Zero(rows, g.cols());
                    for (size_t k = 0; k < indices.size(); ++k)
                      back.row(indices[k]) += g.row(static_cast<long>(k));
                    accum(tp, nd.inputs[0], back);
                  });
  }
  if (axis == 1) {
    Array2d o(A.rows(), m);
    for (long k = 0; k < m; ++k) {
      if (indices[k] < 0 || indices[k] >= A.cols())
        throw ShapeError("index_select: column index out of range");
      o.col(k) = A.array().col(indices[k]);
    }
    long cols = A.cols();
    return t.push(OpKind::kIndexSelect, {a.id}, Tensor::matrix(o),
                  [indices, cols](Tape& tp, int self) {
                    const Node& nd = tp.node(Var{self});
                    const Array2d& g = nd.grad.array();
                    Array2d back = Array2d::Zero(g.rows(), cols);
                    for (size_t k = 0; k < indices.size(); ++k)
                      back.col(indices[k]) += g.col(static_cast<long>(k));
                    accum(tp, nd.inputs[0], back);
                  });
  }
  throw ShapeError("index_select: axis must be 0 or 1");
}

Var embedding_lookup(Tape& t, Var table, const std::vector<int>& ids) {
  if (t.value(table).rank() != 2) throw ShapeError("embedding_lookup: table must be rank 2");
  return index_select(t, table, 0, ids);
}

Var slice_rows(Tape& t, Var a, int r0, int r1) {
  const Tensor& A = t.value(a);
  if (A.rank() != 2) throw ShapeError("slice_rows: rank-2 input required");
  if (r0 < 0 || r1 > A.rows() || r0 >= r1) throw ShapeError("slice_rows: bad row range");
  Array2d o = A.array().middleRows(r0, r1 - r0);
  long rows = A.rows();
  return t.push(OpKind::kSliceRows, {a.id}, Tensor::matrix(o),
                [r0, r1, rows](Tape& tp, int self) {
                  const Node& n = tp.node(Var{self});
                  Array2d back = Array2d::Zero(rows, n.grad.cols());
                  back.middleRows(r0, r1 - r0) = n.grad.array();
                  accum(tp, n.inputs[0], back);
                });
}

Var relu(Tape& t, Var a) {
  Tensor out = t.value(a);
  out.array() = out.array().max(0.0);
  out.set_requires_grad(false);
  return t.push(OpKind::kRelu, {a.id}, std::move(out), [](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    const Array2d& x = tp.value(Var{n.inputs[0]}).array();
    accum(tp, n.inputs[0], n.grad.array() * (x > 0.0).cast<double>());
  });
}

Var exp(Tape& t, Var a) {
  Tensor out = t.value(a);
  out.array() = out.array().exp();
  out.set_requires_grad(false);
  return t.push(OpKind::kExp, {a.id}, std::move(out), [](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    accum(tp, n.inputs[0], n.grad.array() * n.value.array());
  });
}

Var log(Tape& t, Var a) {
  Tensor out = t.value(a);
  out.array() = out.array().log();
  out.set_requires_grad(false);
  return t.push(OpKind::kLog, {a.id}, std::move(out), [](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    accum(tp, n.inputs[0], n.grad.array() / tp.value(Var{n.inputs[0]}).array());
  });
}

Var sigmoid(Tape& t, Var a) {
  Tensor out = t.value(a);
  // 0.5 * (1 + tanh(x/2)) is stable for large |x|
  out.array() = 0.5 * (1.0 + (0.5 * out.array()).tanh());
  out.set_requires_grad(false);
  return t.push(OpKind::kSigmoid, {a.id}, std::move(out), [](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    const Array2d& s = n.value.array();
    accum(tp, n.inputs[0], n.grad.array() * s * (1.0 - s));
  });
}

Var tanh(Tape& t, Var a) {
  Tensor out = t.value(a);
  out.array() = out.array().tanh();
  out.set_requires_grad(false);
  return t.push(OpKind::kTanh, {a.id}, std::move(out), [](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    const Array2d& y = n.value.array();
    accum(tp, n.inputs[0], n.grad.array() * (1.0 - y * y));
  });
}

namespace {

// First maximal index along the reduced axis; ties go to the smallest index.
void argmax_cols(const Array2d& x, Eigen::ArrayXd& vals, std::vector<long>& idx) {
  vals.resize(x.cols());
  idx.assign(x.cols(), 0);
  for (long j = 0; j < x.cols(); ++j) {
    double best = x(0, j);
    long bi = 0;
    for (long i = 1; i < x.rows(); ++i)
      if (x(i, j) > best) {
        best = x(i, j);
        bi = i;
      }
    vals(j) = best;
    idx[j] = bi;
  }
}

}  // namespace

Var max_pool(Tape& t, Var a, int axis) {
  const Tensor& A = t.value(a);
  if (A.rank() == 1) {
    double best = A.at(0);
    long bi = 0;
    for (long i = 1; i < A.cols(); ++i)
      if (A.at(i) > best) {
        best = A.at(i);
        bi = i;
      }
    return t.push(OpKind::kMaxPool, {a.id}, Tensor::scalar(best), [bi](Tape& tp, int self) {
      const Node& n = tp.node(Var{self});
      Array2d back = Array2d::Zero(1, tp.value(Var{n.inputs[0]}).cols());
      back(0, bi) = n.grad.item();
      accum(tp, n.inputs[0], back);
    });
  }
  if (A.rank() != 2) throw ShapeError("max_pool: rank-1 or rank-2 input required");
  if (axis == 0) {
    Eigen::ArrayXd vals;
    std::vector<long> idx;
    argmax_cols(A.array(), vals, idx);
    long rows = A.rows();
    return t.push(OpKind::kMaxPool, {a.id}, Tensor::vector(vals),
                  [idx, rows](Tape& tp, int self) {
                    const Node& n = tp.node(Var{self});
                    Array2d back = Array2d::Zero(rows, n.grad.cols());
                    for (long j = 0; j < n.grad.cols(); ++j) back(idx[j], j) = n.grad.at(j);
                    accum(tp, n.inputs[0], back);
                  });
  }
  if (axis == 1) {
    Eigen::ArrayXd vals;
    std::vector<long> idx;
    Array2d xt = A.array().transpose();
    argmax_cols(xt, vals, idx);
    long cols = A.cols();
    return t.push(OpKind::kMaxPool, {a.id}, Tensor::vector(vals),
                  [idx, cols](Tape& tp, int self) {
                    const Node& n = tp.node(Var{self});
                    Array2d back = Array2d::Zero(n.grad.cols(), cols);
                    for (long i = 0; i < n.grad.cols(); ++i) back(i, idx[i]) = n.grad.at(i);
                    accum(tp, n.inputs[0], back);
                  });
  }
  throw ShapeError("max_pool: axis must be 0 or 1");
}

Var mean(Tape& t, Var a, int axis) {
  const Tensor& A = t.value(a);
  if (A.rank() == 1) {
    double m = A.array().mean();
    long n = A.cols();
    return t.push(OpKind::kMean, {a.id}, Tensor::scalar(m), [n](Tape& tp, int self) {
      const Node& nd = tp.node(Var{self});
      accum(tp, nd.inputs[0], Array2d::Constant(1, n, nd.grad.item() / double(n)));
    });
  }
  if (A.rank() != 2) throw ShapeError("mean: rank-1 or rank-2 input required");
  if (axis == 0) {
    Eigen::ArrayXd m = A.array().colwise().mean().transpose();
    long rows = A.rows();
    return t.push(OpKind::kMean, {a.id}, Tensor::vector(m), [rows](Tape& tp, int self) {
      const Node& n = tp.node(Var{self});
      accum(tp, n.inputs[0], n.grad.array().replicate(rows, 1) / double(rows));
    });
  }
  if (axis == 1) {
    Eigen::ArrayXd m = A.array().rowwise().mean();
    long cols = A.cols();
    return t.push(OpKind::kMean, {a.id}, Tensor::vector(m), [cols](Tape& tp, int self) {
      const Node& n = tp.node(Var{self});
      Array2d g = n.grad.array().transpose();  // column
      accum(tp, n.inputs[0], g.replicate(1, cols) / double(cols));
    });
  }
  throw ShapeError("mean: axis must be 0 or 1");
}

Var sum(Tape& t, Var a, int axis) {
  const Tensor& A = t.value(a);
  if (A.rank() == 1) return sum_all(t, a);
  if (A.rank() != 2) throw ShapeError("sum: rank-1 or rank-2 input required");
  if (axis == 0) {
    Eigen::ArrayXd s = A.array().colwise().sum().transpose();
    long rows = A.rows();
    return t.push(OpKind::kSum, {a.id}, Tensor::vector(s), [rows](Tape& tp, int self) {
      const Node& n = tp.node(Var{self});
      accum(tp, n.inputs[0], n.grad.array().replicate(rows, 1));
    });
  }
  if (axis == 1) {
    Eigen::ArrayXd s = A.array().rowwise().sum();
    long cols = A.cols();
    return t.push(OpKind::kSum, {a.id}, Tensor::vector(s), [cols](Tape& tp, int self) {
      const Node& n = tp.node(Var{self});
      Array2d g = n.grad.array().transpose();
      accum(tp, n.inputs[0], g.replicate(1, cols));
    });
  }
  throw ShapeError("sum: axis must be 0 or 1");
}

Var sum_all(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  double s = A.array().sum();
  long rows = A.rows(), cols = A.cols();
  return t.push(OpKind::kSumAll, {a.id}, Tensor::scalar(s), [rows, cols](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    accum(tp, n.inputs[0], Array2d::Constant(rows, cols, n.grad.item()));
  });
}

Var log_softmax(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  Tensor out = A;
  // per row: x - max - log(sum(exp(x - max)))
  for (long i = 0; i < out.rows(); ++i) {
    double m = out.array().row(i).maxCoeff();
    Eigen::Array<double, 1, Eigen::Dynamic> sh = out.array().row(i) - m;
    double lse = std::log(sh.exp().sum());
    out.array().row(i) = sh - lse;
  }
  out.set_requires_grad(false);
  return t.push(OpKind::kLogSoftmax, {a.id}, std::move(out), [](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    const Array2d& g = n.grad.array();
    const Array2d& y = n.value.array();
    Array2d back(g.rows(), g.cols());
    for (long i = 0; i < g.rows(); ++i) {
      double gs = g.row(i).sum();
      back.row(i) = g.row(i) - y.row(i).exp() * gs;
    }
    accum(tp, n.inputs[0], back);
  });
}

Var logsumexp(Tape& t, Var a, int axis) {
  const Tensor& A = t.value(a);
  if (A.rank() == 1 || A.rank() == 0) {
    double m = A.array().maxCoeff();
    double v = m + std::log((A.array() - m).exp().sum());
    return t.push(OpKind::kLogSumExp, {a.id}, Tensor::scalar(v), [](Tape& tp, int self) {
      const Node& n = tp.node(Var{self});
      const Array2d& x = tp.value(Var{n.inputs[0]}).array();
      accum(tp, n.inputs[0], n.grad.item() * (x - n.value.item()).exp());
    });
  }
  if (A.rank() != 2) throw ShapeError("logsumexp: rank <= 2 input required");
  if (axis == 0) {
    Eigen::ArrayXd out(A.cols());
    for (long j = 0; j < A.cols(); ++j) {
      double m = A.array().col(j).maxCoeff();
      out(j) = m + std::log((A.array().col(j) - m).exp().sum());
    }
    return t.push(OpKind::kLogSumExp, {a.id}, Tensor::vector(out), [](Tape& tp, int self) {
      const Node& n = tp.node(Var{self});
      const Array2d& x = tp.value(Var{n.inputs[0]}).array();
      Array2d back(x.rows(), x.cols());
      for (long j = 0; j < x.cols(); ++j)
        back.col(j) = n.grad.at(j) * (x.col(j) - n.value.at(j)).exp();
      accum(tp, n.inputs[0], back);
    });
  }
  if (axis == 1) {
    Eigen::ArrayXd out(A.rows());
    for (long i = 0; i < A.rows(); ++i) {
      double m = A.array().row(i).maxCoeff();
      out(i) = m + std::log((A.array().row(i) - m).exp().sum());
    }
    return t.push(OpKind::kLogSumExp, {a.id}, Tensor::vector(out), [](Tape& tp, int self) {
      const Node& n = tp.node(Var{self});
      const Array2d& x = tp.value(Var{n.inputs[0]}).array();
      Array2d back(x.rows(), x.cols());
      for (long i = 0; i < x.rows(); ++i)
        back.row(i) = n.grad.at(i) * (x.row(i) - n.value.at(i)).exp();
      accum(tp, n.inputs[0], back);
    });
  }
  throw ShapeError("logsumexp: axis must be 0 or 1");
}

Var outer_add(Tape& t, Var u, Var v) {
  const Tensor& U = t.value(u);
  const Tensor& V = t.value(v);
  if (U.rank() != 1 || V.rank() != 1) throw ShapeError("outer_add: rank-1 inputs required");
  long m = U.cols(), n = V.cols();
  Array2d o(m, n);
  for (long i = 0; i < m; ++i) o.row(i) = U.at(i) + V.array().row(0);
  return t.push(OpKind::kOuterAdd, {u.id, v.id}, Tensor::matrix(o), [](Tape& tp, int self) {
    const Node& nd = tp.node(Var{self});
    const Array2d& g = nd.grad.array();
    accum(tp, nd.inputs[0], g.rowwise().sum().transpose());
    accum(tp, nd.inputs[1], g.colwise().sum());
  });
}

Var cosine(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  if (A.rank() != 1 || B.rank() != 1 || A.cols() != B.cols())
    throw ShapeError("cosine: rank-1 inputs of equal length required");
  double na = std::sqrt(A.array().square().sum());
  double nb = std::sqrt(B.array().square().sum());
  if (na == 0.0 || nb == 0.0) throw NonFiniteError("cosine: zero-norm input");
  double d = (A.array() * B.array()).sum();
  double c = d / (na * nb);
  return t.push(OpKind::kCosine, {a.id, b.id}, Tensor::scalar(c),
                [na, nb, d](Tape& tp, int self) {
                  const Node& n = tp.node(Var{self});
                  double g = n.grad.item();
                  const Array2d& x = tp.value(Var{n.inputs[0]}).array();
                  const Array2d& y = tp.value(Var{n.inputs[1]}).array();
                  accum(tp, n.inputs[0], g * (y / (na * nb) - d * x / (na * na * na * nb)));
                  accum(tp, n.inputs[1], g * (x / (na * nb) - d * y / (nb * nb * nb * na)));
                });
}

Var l2_normalize(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  if (A.rank() != 1) throw ShapeError("l2_normalize: rank-1 input required");
  double n2 = A.array().square().sum();
  double nrm = std::sqrt(n2);
  if (nrm == 0.0) throw NonFiniteError("l2_normalize: zero-norm input");
  Eigen::ArrayXd o = A.array().row(0).transpose() / nrm;
  return t.push(OpKind::kL2Normalize, {a.id}, Tensor::vector(o), [nrm](Tape& tp, int self) {
    const Node& n = tp.node(Var{self});
    const Array2d& g = n.grad.array();
    const Array2d& x = tp.value(Var{n.inputs[0]}).array();
    double xg = (x * g).sum();
    accum(tp, n.inputs[0], g / nrm - x * (xg / (nrm * nrm * nrm)));
  });
}

}  // namespace mpcfg
