// Brute-force oracles for the chart module: explicit enumeration of all
// binary tree shapes (Catalan(n-1) of them), with per-shape sums or
// maxima over symbol labelings. Deliberately organized differently from
// the chart's CKY recursion so the two act as independent witnesses; a
// third, fully naive labeled-tree enumeration cross-checks the shape DP
// at small n.
#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <tuple>
#include <vector>

#include "mpcfg/chart.hpp"
#include "mpcfg/tensor.hpp"

namespace enumo {

struct Grammar {
  Eigen::ArrayXd start;      // log pi_{S->A}, size |N|
  mpcfg::Array2d binary;     // log pi_{A->BC}, |N| x (|N|+|P|)^2, column B*ns+C
  mpcfg::Array2d terminal;   // log pi_{T->w_i}, |P| x n
  int nn = 0, np = 0;

  int ns() const { return nn + np; }
  int n_words() const { return static_cast<int>(terminal.cols()); }
};

// Shape arena: every distinct subtree shape over a span is one node;
// shapes over (i, j) are lists of root node ids. Leaves have k == -1.
struct ShapeNode {
  int i, j, k;  // split point (left child covers [i, k])
  int left = -1, right = -1;
};

class ShapeEnum {
 public:
  explicit ShapeEnum(int n) : n_(n), lists_(static_cast<size_t>(n) * n) {
    for (int i = 1; i <= n; ++i) build(i, i);
    for (int w = 2; w <= n; ++w)
      for (int i = 1; i + w - 1 <= n; ++i) build(i, i + w - 1);
  }

  const std::vector<int>& shapes(int i, int j) const {
    return lists_[mpcfg::span_slot(i, j, n_)];
  }
  const ShapeNode& node(int id) const { return arena_[id]; }
  size_t arena_size() const { return arena_.size(); }

 private:
  void build(int i, int j) {
    auto& list = lists_[mpcfg::span_slot(i, j, n_)];
    if (i == j) {
      arena_.push_back(ShapeNode{i, j, -1});
      list.push_back(static_cast<int>(arena_.size()) - 1);
      return;
    }
    for (int k = i; k < j; ++k)
      for (int l : shapes(i, k))
        for (int r : shapes(k + 1, j)) {
          arena_.push_back(ShapeNode{i, j, k, l, r});
          list.push_back(static_cast<int>(arena_.size()) - 1);
        }
  }

  int n_;
  std::vector<ShapeNode> arena_;
  std::vector<std::vector<int>> lists_;
};

// Sum over labelings of one subtree shape, bottom-up in probability
// space (tiny grammars; doubles suffice).
inline Eigen::ArrayXd labeling_sum(const Grammar& g, const ShapeEnum& se, int id,
                                   std::vector<Eigen::ArrayXd>& memo) {
  if (memo[id].size() > 0) return memo[id];
  const ShapeNode& nd = se.node(id);
  if (nd.k < 0) {
    memo[id] = g.terminal.col(nd.i - 1).exp();  // over preterminals
    return memo[id];
  }
  Eigen::ArrayXd l = labeling_sum(g, se, nd.left, memo);
  Eigen::ArrayXd r = labeling_sum(g, se, nd.right, memo);
  bool lp = se.node(nd.left).i == se.node(nd.left).j;
  bool rp = se.node(nd.right).i == se.node(nd.right).j;
  int b_base = lp ? g.nn : 0, c_base = rp ? g.nn : 0;
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(g.nn);
  for (int a = 0; a < g.nn; ++a) {
    double acc = 0.0;
    for (int b = 0; b < l.size(); ++b)
      for (int c = 0; c < r.size(); ++c)
        acc += std::exp(g.binary(a, (b_base + b) * g.ns() + (c_base + c))) * l(b) * r(c);
    out(a) = acc;
  }
  memo[id] = out;
  return out;
}

inline double log_likelihood(const Grammar& g) {
  int n = g.n_words();
  ShapeEnum se(n);
  std::vector<Eigen::ArrayXd> memo(se.arena_size());
  double total = 0.0;
  for (int id : se.shapes(1, n)) {
    Eigen::ArrayXd root = labeling_sum(g, se, id, memo);
    total += (g.start.exp() * root).sum();
  }
  return std::log(total);
}

// Max over labelings of one subtree shape (log space).
inline Eigen::ArrayXd labeling_max(const Grammar& g, const ShapeEnum& se, int id,
                                   std::vector<Eigen::ArrayXd>& memo) {
  if (memo[id].size() > 0) return memo[id];
  const ShapeNode& nd = se.node(id);
  if (nd.k < 0) {
    memo[id] = g.terminal.col(nd.i - 1);
    return memo[id];
  }
  Eigen::ArrayXd l = labeling_max(g, se, nd.left, memo);
  Eigen::ArrayXd r = labeling_max(g, se, nd.right, memo);
  bool lp = se.node(nd.left).i == se.node(nd.left).j;
  bool rp = se.node(nd.right).i == se.node(nd.right).j;
  int b_base = lp ? g.nn : 0, c_base = rp ? g.nn : 0;
  Eigen::ArrayXd out =
      Eigen::ArrayXd::Constant(g.nn, -std::numeric_limits<double>::infinity());
  for (int a = 0; a < g.nn; ++a)
    for (int b = 0; b < l.size(); ++b)
      for (int c = 0; c < r.size(); ++c)
        out(a) = std::max(out(a),
                          g.binary(a, (b_base + b) * g.ns() + (c_base + c)) + l(b) + r(c));
  memo[id] = out;
  return out;
}

inline void collect_spans(const ShapeEnum& se, int id, std::vector<mpcfg::Span>& out) {
  const ShapeNode& nd = se.node(id);
  if (nd.k < 0) return;
  out.push_back(mpcfg::Span{nd.i, nd.j, -1});
  collect_spans(se, nd.left, out);
  collect_spans(se, nd.right, out);
}

// Best labeled tree over all shapes. `unique_shape` reports whether the
// best shape beats every other shape by more than 1e-9 (the span set is a
// function of the shape alone).
inline double viterbi_log_prob(const Grammar& g, std::vector<mpcfg::Span>* best_spans,
                               bool* unique_shape) {
  int n = g.n_words();
  ShapeEnum se(n);
  std::vector<Eigen::ArrayXd> memo(se.arena_size());
  double best = -std::numeric_limits<double>::infinity();
  double second = best;
  int best_id = -1;
  for (int id : se.shapes(1, n)) {
    Eigen::ArrayXd root = labeling_max(g, se, id, memo);
    double s = (g.start + root).maxCoeff();
    if (s > best) {
      second = best;
      best = s;
      best_id = id;
    } else if (s > second) {
      second = s;
    }
  }
  if (best_spans) {
    best_spans->clear();
    collect_spans(se, best_id, *best_spans);
    std::sort(best_spans->begin(), best_spans->end());
  }
  if (unique_shape) *unique_shape = best - second > 1e-9;
  return best;
}

// Fully naive: iterate every labeled tree explicitly (internal labels x
// leaf labels per shape), no dynamic programming at all. Practical for
// n <= 4. Returns log likelihood and per-(i, j, label) marginals of
// width >= 2 spans.
struct NaiveResult {
  double log_likelihood;
  std::map<std::tuple<int, int, int>, double> marginals;
};

inline NaiveResult naive_enumeration(const Grammar& g) {
  int n = g.n_words();
  ShapeEnum se(n);

  struct FlatShape {
    std::vector<ShapeNode> internals;  // pre-order
    std::vector<int> leaf_pos;         // word position per leaf, in-order
  };
  std::vector<FlatShape> flats;
  for (int id : se.shapes(1, n)) {
    FlatShape f;
    std::function<void(int)> walk = [&](int nid) {
      const ShapeNode& nd = se.node(nid);
      if (nd.k < 0) {
        f.leaf_pos.push_back(nd.i);
        return;
      }
      f.internals.push_back(nd);
      walk(nd.left);
      walk(nd.right);
    };
    walk(id);
    flats.push_back(std::move(f));
  }

  double z = 0.0;
  std::map<std::tuple<int, int, int>, double> acc;
  for (const FlatShape& f : flats) {
    int m = static_cast<int>(f.internals.size());
    std::vector<int> ilab(m, 0), llab(n, 0);
    auto tree_log_prob = [&]() {
      // label of a node = internal label if width >= 2, else leaf label
      auto label_of = [&](int i, int j) {
        if (i == j) {
          for (int q = 0; q < n; ++q)
            if (f.leaf_pos[q] == i) return g.nn + llab[q];
          return -1;
        }
        for (int q = 0; q < m; ++q)
          if (f.internals[q].i == i && f.internals[q].j == j) return ilab[q];
        return -1;
      };
      double lp = g.start(ilab[0]);  // internals[0] is the root (pre-order)
      for (int q = 0; q < m; ++q) {
        const ShapeNode& nd = f.internals[q];
        int b = label_of(nd.i, nd.k);
        int c = label_of(nd.k + 1, nd.j);
        lp += g.binary(ilab[q], b * g.ns() + c);
      }
      for (int q = 0; q < n; ++q) lp += g.terminal(llab[q], f.leaf_pos[q] - 1);
      return lp;
    };
    // Odometer over all labelings.
    while (true) {
      double p = std::exp(tree_log_prob());
      z += p;
      for (int q = 0; q < m; ++q)
        acc[{f.internals[q].i, f.internals[q].j, ilab[q]}] += p;
      int d = 0;
      for (; d < m; ++d) {
        if (++ilab[d] < g.nn) break;
        ilab[d] = 0;
      }
      if (d < m) continue;
      for (d = 0; d < n; ++d) {
        if (++llab[d] < g.np) break;
        llab[d] = 0;
      }
      if (d == n) break;
    }
  }
  NaiveResult res;
  res.log_likelihood = std::log(z);
  for (auto& [key, v] : acc) v /= z;
  res.marginals = std::move(acc);
  return res;
}

}  // namespace enumo
