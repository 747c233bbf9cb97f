#include "mpcfg/eval.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace mpcfg {

bool is_punctuation_token(const std::string& token) {
  if (token.empty()) return false;
  return std::all_of(token.begin(), token.end(),
                     [](unsigned char c) { return std::ispunct(c) != 0; });
}

bool is_numeric_token(const std::string& token) {
  size_t start = 0;
  if (!token.empty() && (token[0] == '+' || token[0] == '-')) start = 1;
  if (start >= token.size()) return false;
  bool digit = false;
  for (size_t k = start; k < token.size(); ++k) {
    char c = token[k];
    if (c >= '0' && c <= '9')
      digit = true;
    else if (c != ',' && c != '.')
      return false;
  }
  return digit;
}

std::vector<std::string> preprocess_tokens(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const std::string& token : tokens) {
    if (token.empty() || is_punctuation_token(token)) continue;
    if (is_numeric_token(token)) {
      out.push_back(kNumToken);
      continue;
    }
    std::string low = token;
    std::transform(low.begin(), low.end(), low.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(low);
  }
  return out;
}

namespace {

struct PtbParser {
  const std::string& text;
  size_t pos = 0;

  explicit PtbParser(const std::string& t) : text(t) {}

  void skip_space() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  std::string symbol() {
    size_t start = pos;
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) &&
           text[pos] != '(' && text[pos] != ')')
      ++pos;
    if (pos == start) throw std::runtime_error("malformed bracketing: expected symbol");
    return text.substr(start, pos - start);
  }

  PtbTree node() {
    skip_space();
    if (pos >= text.size() || text[pos] != '(')
      throw std::runtime_error("malformed bracketing: expected '('");
    ++pos;
    skip_space();
    PtbTree out;
    out.label = symbol();
    skip_space();
    if (pos < text.size() && text[pos] != '(' && text[pos] != ')') {
      out.word = symbol();  // preterminal: (POS word)
    } else {
      while (true) {
        skip_space();
        if (pos >= text.size()) throw std::runtime_error("malformed bracketing: unbalanced");
        if (text[pos] == ')') break;
        out.children.push_back(node());
      }
      if (out.children.empty())
        throw std::runtime_error("malformed bracketing: node without children");
    }
    skip_space();
    if (pos >= text.size() || text[pos] != ')')
      throw std::runtime_error("malformed bracketing: expected ')'");
    ++pos;
    return out;
  }
};

std::string normalize_label(const std::string& label) {
  size_t cut = label.find_first_of("-=");
  return cut == std::string::npos || cut == 0 ? label : label.substr(0, cut);
}

void collect_leaves(const PtbTree& tree, std::vector<std::string>& out) {
  if (tree.is_leaf()) {
    out.push_back(tree.word);
    return;
  }
  for (const PtbTree& child : tree.children) collect_leaves(child, out);
}

// Returns the node's leaf span [first, last] (1-based), appending every
// internal node's span along the way.
std::pair<int, int> collect_spans(const PtbTree& tree, int next_leaf,
                                  std::vector<EvalSpan>& out) {
  if (tree.is_leaf()) return {next_leaf, next_leaf};
  int first = next_leaf, last = next_leaf - 1;
  for (const PtbTree& child : tree.children) {
    auto [ci, cj] = collect_spans(child, last + 1, out);
    last = cj;
  }
  out.push_back({first, last, normalize_label(tree.label)});
  return {first, last};
}

}  // namespace

PtbTree parse_ptb(const std::string& text) {
  PtbParser parser(text);
  PtbTree tree = parser.node();
  parser.skip_space();
  if (parser.pos != text.size())
    throw std::runtime_error("malformed bracketing: trailing characters");
  return tree;
}

std::vector<std::string> tree_leaves(const PtbTree& tree) {
  std::vector<std::string> out;
  collect_leaves(tree, out);
  return out;
}

std::vector<EvalSpan> tree_spans(const PtbTree& tree) {
  std::vector<EvalSpan> out;
  collect_spans(tree, 1, out);
  return out;
}

std::vector<EvalSpan> eval_filter(const std::vector<EvalSpan>& spans, int n) {
  std::vector<EvalSpan> out;
  std::set<std::pair<int, int>> seen;
  for (const EvalSpan& s : spans) {
    if (s.j <= s.i) continue;
    if (s.i == 1 && s.j == n) continue;
    if (!seen.insert({s.i, s.j}).second) continue;
    out.push_back(s);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<EvalSpan> remap_spans(const std::vector<EvalSpan>& spans,
                                  const std::vector<bool>& kept) {
  // new_index[k] = 1-based position among kept tokens, 0 if dropped.
  std::vector<int> new_index(kept.size(), 0);
  int next = 0;
  for (size_t k = 0; k < kept.size(); ++k)
    if (kept[k]) new_index[k] = ++next;
  std::vector<EvalSpan> out;
  for (const EvalSpan& s : spans) {
    if (s.i < 1 || s.j > static_cast<int>(kept.size()) || s.i > s.j)
      throw std::out_of_range("remap_spans: span outside the sentence");
    int lo = 0, hi = 0;
    for (int k = s.i; k <= s.j; ++k) {
      if (!kept[static_cast<size_t>(k - 1)]) continue;
      if (lo == 0) lo = new_index[static_cast<size_t>(k - 1)];
      hi = new_index[static_cast<size_t>(k - 1)];
    }
    if (lo == 0) continue;  // span emptied out
    out.push_back({lo, hi, s.label});
  }
  return out;
}

std::vector<EvalSpan> gold_eval_spans(const std::string& gold_tree,
                                      const std::vector<std::string>& raw_tokens) {
  PtbTree tree = parse_ptb(gold_tree);
  std::vector<std::string> leaves = tree_leaves(tree);
  if (!raw_tokens.empty() && leaves.size() != raw_tokens.size())
    throw std::runtime_error("gold tree leaf count does not match the sentence");
  std::vector<bool> kept;
  kept.reserve(leaves.size());
  int n_kept = 0;
  for (const std::string& leaf : leaves) {
    bool keep = !is_punctuation_token(leaf);
    kept.push_back(keep);
    n_kept += keep ? 1 : 0;
  }
  return eval_filter(remap_spans(tree_spans(tree), kept), n_kept);
}

EvalReport evaluate(const std::vector<SentenceEval>& sentences) {
  EvalReport report;
  double f1_sum = 0.0;
  long match_total = 0, pred_total = 0, gold_total = 0;
  std::map<std::string, long> label_gold, label_hit;

  for (const SentenceEval& sent : sentences) {
    if (sent.gold.empty()) {
      ++report.skipped_sentences;
      continue;
    }
    ++report.counted_sentences;
    std::set<std::pair<int, int>> pred_set, gold_set;
    for (const EvalSpan& s : sent.pred) pred_set.insert({s.i, s.j});
    for (const EvalSpan& s : sent.gold) gold_set.insert({s.i, s.j});
    long match = 0;
    for (const auto& s : pred_set) match += gold_set.count(s) ? 1 : 0;

    double p = pred_set.empty() ? 0.0 : static_cast<double>(match) / pred_set.size();
    double r = static_cast<double>(match) / gold_set.size();
    f1_sum += (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    match_total += match;
    pred_total += static_cast<long>(pred_set.size());
    gold_total += static_cast<long>(gold_set.size());

    for (const EvalSpan& s : sent.gold) {
      if (std::find(recall_labels().begin(), recall_labels().end(), s.label) ==
          recall_labels().end())
        continue;
      ++label_gold[s.label];
      if (pred_set.count({s.i, s.j})) ++label_hit[s.label];
    }
  }

  if (report.counted_sentences > 0) {
    report.s_f1 = 100.0 * f1_sum / static_cast<double>(report.counted_sentences);
    double p = pred_total > 0 ? static_cast<double>(match_total) / pred_total : 0.0;
    double r = gold_total > 0 ? static_cast<double>(match_total) / gold_total : 0.0;
    report.c_f1 = (p + r) > 0.0 ? 100.0 * 2.0 * p * r / (p + r) : 0.0;
  }
  for (const auto& [label, total] : label_gold)
    report.label_recall[label] = 100.0 * static_cast<double>(label_hit[label]) / total;
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::json j = {{"s_f1", s_f1},
                      {"c_f1", c_f1},
                      {"label_recall", label_recall},
                      {"counted_sentences", counted_sentences},
                      {"skipped_sentences", skipped_sentences}};
  return j.dump(2);
}

}  // namespace mpcfg
