#pragma once

#include <vector>

#include "mpcfg/grammar.hpp"
#include "mpcfg/tape.hpp"

namespace mpcfg {

// 1-based inclusive span over sentence positions. `label` is a symbol id:
// nonterminals occupy 0..|N|-1, preterminals |N|..|N|+|P|-1; -1 = unlabeled.
struct Span {
  int i = 0;
  int j = 0;
  int label = -1;

  friend bool operator==(const Span& a, const Span& b) { return a.i == b.i && a.j == b.j; }
  friend bool operator<(const Span& a, const Span& b) {
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  }
};

inline int span_slot(int i, int j, int n) { return (i - 1) * n + (j - 1); }

// Inside chart over one sentence. Width-1 spans live in `pre` (vectors
// over preterminals); width >= 2 spans in `beta` (vectors over
// nonterminals), indexed by span_slot.
struct InsideChart {
  int n = 0;
  int n_nt = 0;
  int n_pt = 0;
  std::vector<Var> pre;
  std::vector<Var> beta;
  Var log_likelihood;
};

// Log-space inside recursion (CKY order). `injected`, when given, is a
// span_slot-indexed vector of {|N|} score vectors added to the inside
// value of each width->=2 span; the gradient of log_likelihood with
// respect to an injected score equals that span's label marginal.
InsideChart inside(Tape& t, const RuleTable& rules, int n,
                   const std::vector<Var>* injected = nullptr);

// Span marginals from an explicit outside pass (recorded on the tape, so
// losses built on them receive exact gradients).
//   mu[s]         {|N|}  mu(c, k) = P(tree contains span c labeled k)
//   p_span[s]     scalar p(c|sigma) = sum_k mu(c, k)
//   label_post[s] {|N|}  p(k|c, sigma)
// Spans enumerate all width >= 2 spans in (i, j) order, root included.
struct Marginals {
  std::vector<Span> spans;
  std::vector<Var> mu;
  std::vector<Var> p_span;
  std::vector<Var> label_post;
};

Marginals span_marginals(Tape& t, const RuleTable& rules, const InsideChart& chart);

// Max-product decode with backpointers; off-tape (plain values). Returns
// every span of the best tree (width-1 spans labeled with preterminal
// ids), sorted by (i, j). Ties prefer the smaller split point, then the
// smaller symbol index.
struct ViterbiTree {
  std::vector<Span> spans;
  double log_prob = 0.0;
};

ViterbiTree cyk_viterbi(const Tensor& start, const Tensor& binary, const Tensor& terminal,
                        int n_nt, int n_pt);
ViterbiTree cyk_viterbi(Tape& t, const RuleTable& rules);

}  // namespace mpcfg
