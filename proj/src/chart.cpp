#include "mpcfg/chart.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <stdexcept>

namespace mpcfg {

namespace {

// Column indices into the flattened binary-rule table for all (B, C)
// pairs with B in the left child set and C in the right child set; child
// sets are preterminals for width-1 children and nonterminals otherwise.
std::vector<int> block_columns(int nn, int np, bool left_pre, bool right_pre) {
  int ns = nn + np;
  int b_base = left_pre ? nn : 0, b_count = left_pre ? np : nn;
  int c_base = right_pre ? nn : 0, c_count = right_pre ? np : nn;
  std::vector<int> cols;
  cols.reserve(static_cast<size_t>(b_count) * c_count);
  for (int b = 0; b < b_count; ++b)
    for (int c = 0; c < c_count; ++c) cols.push_back((b_base + b) * ns + (c_base + c));
  return cols;
}

struct Blocks {
  Var v[2][2];  // [left_pre][right_pre], each {|N|, mB*mC}
};

Blocks gather_blocks(Tape& t, const RuleTable& rules) {
  Blocks b;
  for (int lp = 0; lp < 2; ++lp)
    for (int rp = 0; rp < 2; ++rp)
      b.v[lp][rp] = index_select(t, rules.binary, 1,
                                 block_columns(rules.n_nt, rules.n_pt, lp, rp));
  return b;
}

}  // namespace

InsideChart inside(Tape& t, const RuleTable& rules, int n, const std::vector<Var>* injected) {
  if (n < 2) throw std::invalid_argument("inside: sentence length must be at least 2");
  const Tensor& term = t.value(rules.terminal);
  if (term.cols() != n) throw ShapeError("inside: terminal table width differs from sentence");
  int nn = rules.n_nt, np = rules.n_pt;

  InsideChart ch;
  ch.n = n;
  ch.n_nt = nn;
  ch.n_pt = np;
  ch.pre.resize(n);
  ch.beta.assign(static_cast<size_t>(n) * n, Var{});

  for (int i = 0; i < n; ++i)
    ch.pre[i] = reshape(t, index_select(t, rules.terminal, 1, {i}), {np});

  Blocks blocks = gather_blocks(t, rules);

  for (int w = 2; w <= n; ++w) {
    for (int i = 1; i + w - 1 <= n; ++i) {
      int j = i + w - 1;
      std::vector<Var> parts;
      parts.reserve(w - 1);
      for (int k = i; k < j; ++k) {
        bool lp = (k == i), rp = (k + 1 == j);
        Var u = lp ? ch.pre[i - 1] : ch.beta[span_slot(i, k, n)];
        Var v = rp ? ch.pre[k] : ch.beta[span_slot(k + 1, j, n)];
        int m = static_cast<int>(t.value(u).numel() * t.value(v).numel());
        Var flat = reshape(t, outer_add(t, u, v), {m});
        parts.push_back(add(t, blocks.v[lp][rp], flat));
      }
      Var all = parts.size() == 1 ? parts[0] : concat(t, parts, 1);
      Var b = logsumexp(t, all, 1);
      if (injected) {
        Var s = (*injected)[span_slot(i, j, n)];
        if (s.valid()) b = add(t, b, s);
      }
      ch.beta[span_slot(i, j, n)] = b;
    }
  }
  ch.log_likelihood = logsumexp(t, add(t, rules.start, ch.beta[span_slot(1, n, n)]), 0);
  return ch;
}

Marginals span_marginals(Tape& t, const RuleTable& rules, const InsideChart& ch) {
  int n = ch.n, nn = ch.n_nt;
  Blocks blocks = gather_blocks(t, rules);

  std::vector<std::vector<Var>> contribs(static_cast<size_t>(n) * n);
  std::vector<Var> outside(static_cast<size_t>(n) * n);
  outside[span_slot(1, n, n)] = rules.start;

  for (int w = n; w >= 2; --w) {
    for (int i = 1; i + w - 1 <= n; ++i) {
      int j = i + w - 1;
      int slot = span_slot(i, j, n);
      if (!(i == 1 && j == n)) {
        auto& cs = contribs[slot];
        Var stacked = cs.size() == 1 ? reshape(t, cs[0], {1, nn}) : concat(t, cs, 0);
        outside[slot] = logsumexp(t, stacked, 0);
      }
      Var op = outside[slot];
      for (int k = i; k < j; ++k) {
        bool lp = (k == i), rp = (k + 1 == j);
        if (lp && rp) continue;  // both children are single words
        Var block = blocks.v[lp][rp];
        int m_b = lp ? ch.n_pt : nn;
        int m_c = rp ? ch.n_pt : nn;
        // Fold the parent label in first: M[b, c] = lse_A(out[A] + bin[A, bc]).
        Var folded = logsumexp(t, add(t, transpose(t, block), op), 1);
        Var m = reshape(t, folded, {m_b, m_c});
        if (!lp) {
          Var v = rp ? ch.pre[k] : ch.beta[span_slot(k + 1, j, n)];
          contribs[span_slot(i, k, n)].push_back(logsumexp(t, add(t, m, v), 1));
        }
        if (!rp) {
          Var u = lp ? ch.pre[i - 1] : ch.beta[span_slot(i, k, n)];
          contribs[span_slot(k + 1, j, n)].push_back(
              logsumexp(t, add(t, transpose(t, m), u), 1));
        }
      }
    }
  }

  Marginals out;
  for (int i = 1; i <= n; ++i) {
    for (int j = i + 1; j <= n; ++j) {
      int slot = span_slot(i, j, n);
      Var mu = exp(t, sub(t, add(t, outside[slot], ch.beta[slot]), ch.log_likelihood));
      Var p = sum_all(t, mu);
      out.spans.push_back(Span{i, j, -1});
      out.mu.push_back(mu);
      out.p_span.push_back(p);
      out.label_post.push_back(div(t, mu, p));
    }
  }
  return out;
}

ViterbiTree cyk_viterbi(const Tensor& start, const Tensor& binary, const Tensor& terminal,
                        int n_nt, int n_pt) {
  int n = static_cast<int>(terminal.cols());
  if (n < 2) throw std::invalid_argument("cyk_viterbi: sentence length must be at least 2");
  int ns = n_nt + n_pt;
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  struct Back {
    int k = -1, b = -1, c = -1;
  };
  std::vector<Eigen::ArrayXd> best(static_cast<size_t>(n) * n);
  std::vector<std::vector<Back>> back(static_cast<size_t>(n) * n);

  // score of global symbol `sym` over child span (i, j)
  auto child_score = [&](int i, int j, int sym) {
    if (i == j) return terminal.at(sym - n_nt, i - 1);
    return best[span_slot(i, j, n)](sym);
  };

  for (int w = 2; w <= n; ++w) {
    for (int i = 1; i + w - 1 <= n; ++i) {
      int j = i + w - 1;
      Eigen::ArrayXd sc = Eigen::ArrayXd::Constant(n_nt, kNegInf);
      std::vector<Back> bp(n_nt);
      for (int k = i; k < j; ++k) {
        bool lp = (k == i), rp = (k + 1 == j);
        int b_base = lp ? n_nt : 0, b_end = lp ? ns : n_nt;
        int c_base = rp ? n_nt : 0, c_end = rp ? ns : n_nt;
        for (int b = b_base; b < b_end; ++b) {
          double ls = child_score(i, k, b);
          for (int c = c_base; c < c_end; ++c) {
            double body = ls + child_score(k + 1, j, c);
            for (int a = 0; a < n_nt; ++a) {
              double s = binary.at(a, b * ns + c) + body;
              if (s > sc(a)) {
                sc(a) = s;
                bp[a] = Back{k, b, c};
              }
            }
          }
        }
      }
      best[span_slot(i, j, n)] = sc;
      back[span_slot(i, j, n)] = std::move(bp);
    }
  }

  int root = 0;
  double root_score = kNegInf;
  for (int a = 0; a < n_nt; ++a) {
    double s = start.at(a) + best[span_slot(1, n, n)](a);
    if (s > root_score) {
      root_score = s;
      root = a;
    }
  }

  ViterbiTree tree;
  tree.log_prob = root_score;
  std::function<void(int, int, int)> emit = [&](int i, int j, int sym) {
    tree.spans.push_back(Span{i, j, sym});
    if (i == j) return;
    const Back& bp = back[span_slot(i, j, n)][sym];
    emit(i, bp.k, bp.b);
    emit(bp.k + 1, j, bp.c);
  };
  emit(1, n, root);
  std::sort(tree.spans.begin(), tree.spans.end());
  return tree;
}

ViterbiTree cyk_viterbi(Tape& t, const RuleTable& rules) {
  return cyk_viterbi(t.value(rules.start), t.value(rules.binary), t.value(rules.terminal),
                     rules.n_nt, rules.n_pt);
}

}  // namespace mpcfg
