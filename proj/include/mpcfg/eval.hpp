#pragma once

#include <map>
#include <string>
#include <vector>

namespace mpcfg {

inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kNumToken = "<num>";

// Reported phrase types for per-label recall.
inline const std::vector<std::string>& recall_labels() {
  static const std::vector<std::string> labels = {"NP", "VP", "PP", "SBAR", "ADJP", "ADVP"};
  return labels;
}

// 1-based inclusive unlabeled span; `label` carries the gold phrase type
// when known (empty for predictions).
struct EvalSpan {
  int i = 0;
  int j = 0;
  std::string label;

  friend bool operator==(const EvalSpan& a, const EvalSpan& b) { return a.i == b.i && a.j == b.j; }
  friend bool operator<(const EvalSpan& a, const EvalSpan& b) {
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  }
};

// Drops punctuation-only tokens, lowercases, and maps numeric tokens
// (optional leading sign, then digits/commas/periods with at least one
// digit) to the NUM token. May return an empty list.
std::vector<std::string> preprocess_tokens(const std::vector<std::string>& tokens);

bool is_punctuation_token(const std::string& token);
bool is_numeric_token(const std::string& token);

// PTB-style bracketed tree.
struct PtbTree {
  std::string label;
  std::vector<PtbTree> children;
  std::string word;  // nonempty only for leaves

  bool is_leaf() const { return children.empty(); }
};

PtbTree parse_ptb(const std::string& text);
std::vector<std::string> tree_leaves(const PtbTree& tree);

// Spans of every internal (non-leaf) node, 1-based inclusive over the
// tree's leaves, labels normalized (function tags after '-'/'=' removed).
std::vector<EvalSpan> tree_spans(const PtbTree& tree);

// Evaluation filter: keep spans with j > i and (i, j) != (1, n);
// duplicates collapse to one span.
std::vector<EvalSpan> eval_filter(const std::vector<EvalSpan>& spans, int n);

// Re-index spans onto the subsequence of kept positions (kept.size() =
// original sentence length). A span shrinks to its kept extent; spans
// with no kept position are dropped.
std::vector<EvalSpan> remap_spans(const std::vector<EvalSpan>& spans,
                                  const std::vector<bool>& kept);

// Gold side of one sentence: parse, remap through the preprocessing
// keep-mask, filter. Throws on malformed bracketings.
std::vector<EvalSpan> gold_eval_spans(const std::string& gold_tree,
                                      const std::vector<std::string>& raw_tokens);

struct SentenceEval {
  std::vector<EvalSpan> pred;
  std::vector<EvalSpan> gold;
};

struct EvalReport {
  double s_f1 = 0.0;
  double c_f1 = 0.0;
  std::map<std::string, double> label_recall;
  long counted_sentences = 0;
  long skipped_sentences = 0;

  std::string to_json() const;
};

// S-F1 = mean per-sentence F1; C-F1 = micro F1 over aggregated span
// counts. Sentences with an empty gold eval-span set are skipped.
EvalReport evaluate(const std::vector<SentenceEval>& sentences);

}  // namespace mpcfg
