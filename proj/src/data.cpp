#include "mpcfg/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mpcfg/eval.hpp"

namespace mpcfg {

namespace {

bool is_terminal_punct(const std::string& token) {
  return token == "." || token == "?" || token == "!";
}

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) out.push_back(word);
  return out;
}

// "world." -> {"world", "."}; "again?!" -> {"again", "?", "!"}.
std::vector<std::string> split_attached_punct(const std::string& word) {
  size_t end = word.size();
  while (end > 1 && (word[end - 1] == '.' || word[end - 1] == '?' || word[end - 1] == '!' ||
                     word[end - 1] == ','))
    --end;
  std::vector<std::string> out;
  out.push_back(word.substr(0, end));
  for (size_t k = end; k < word.size(); ++k) out.push_back(std::string(1, word[k]));
  return out;
}

bool parse_timestamp(const std::string& field, double* seconds) {
  // HH:MM:SS.mmm or MM:SS.mmm, comma decimals accepted.
  std::string s = field;
  std::replace(s.begin(), s.end(), ',', '.');
  std::vector<double> parts;
  std::istringstream in(s);
  std::string piece;
  while (std::getline(in, piece, ':')) {
    if (piece.empty()) return false;
    try {
      size_t used = 0;
      parts.push_back(std::stod(piece, &used));
      if (used != piece.size()) return false;
    } catch (const std::exception&) {
      return false;
    }
  }
  if (parts.size() < 2 || parts.size() > 3) return false;
  *seconds = 0.0;
  for (double part : parts) *seconds = *seconds * 60.0 + part;
  return true;
}

}  // namespace

std::vector<SubtitleBlock> parse_webvtt(const std::string& content) {
  std::vector<SubtitleBlock> blocks;
  std::istringstream in(content);
  std::string line;
  std::vector<std::string> cue;
  auto flush = [&]() {
    if (cue.empty()) return;
    size_t ts_line = cue.size();
    for (size_t k = 0; k < cue.size() && k < 2; ++k)
      if (cue[k].find("-->") != std::string::npos) {
        ts_line = k;
        break;
      }
    if (ts_line == cue.size()) {  // header / NOTE block
      cue.clear();
      return;
    }
    const std::string& ts = cue[ts_line];
    size_t arrow = ts.find("-->");
    std::string lhs = ts.substr(0, arrow);
    std::string rhs = ts.substr(arrow + 3);
    // Cue settings after the end timestamp are ignored.
    std::istringstream rhs_in(rhs);
    std::string end_field;
    rhs_in >> end_field;
    std::istringstream lhs_in(lhs);
    std::string start_field;
    lhs_in >> start_field;
    SubtitleBlock block;
    if (!parse_timestamp(start_field, &block.start_s) ||
        !parse_timestamp(end_field, &block.end_s))
      throw std::runtime_error("malformed cue timestamp: " + ts);
    if (block.end_s <= block.start_s)
      throw std::runtime_error("cue interval is empty or inverted: " + ts);
    std::string text;
    for (size_t k = ts_line + 1; k < cue.size(); ++k) {
      if (!text.empty()) text += ' ';
      text += cue[k];
    }
    if (!text.empty()) {
      block.text = text;
      blocks.push_back(block);
    }
    cue.clear();
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty())
      flush();
    else
      cue.push_back(line);
  }
  flush();
  return blocks;
}

std::vector<SubtitleBlock> read_webvtt_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open subtitle file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_webvtt(buffer.str());
}

std::vector<TimedWord> assign_word_times(const SubtitleBlock& block) {
  if (block.end_s <= block.start_s)
    throw std::invalid_argument("assign_word_times: empty or inverted block interval");
  std::vector<std::string> words = split_whitespace(block.text);
  if (words.empty()) throw std::invalid_argument("assign_word_times: block has no words");
  double delta = (block.end_s - block.start_s) / static_cast<double>(words.size());
  std::vector<TimedWord> out;
  for (size_t i = 0; i < words.size(); ++i) {
    double ws = block.start_s + static_cast<double>(i) * delta;
    double we = i + 1 == words.size() ? block.end_s
                                      : block.start_s + static_cast<double>(i + 1) * delta;
    for (const std::string& piece : split_attached_punct(words[i]))
      out.push_back({piece, ws, we});
  }
  return out;
}

std::vector<TimedWord> rule_based_restore(const std::vector<SubtitleBlock>& blocks,
                                          double gap_seconds) {
  std::vector<TimedWord> out;
  for (size_t b = 0; b < blocks.size(); ++b) {
    std::vector<TimedWord> words = assign_word_times(blocks[b]);
    out.insert(out.end(), words.begin(), words.end());
    if (b + 1 >= blocks.size()) continue;
    if (!out.empty() && is_terminal_punct(out.back().text)) continue;  // already punctuated
    std::vector<std::string> next_words = split_whitespace(blocks[b + 1].text);
    bool capitalized = !next_words.empty() &&
                       std::isupper(static_cast<unsigned char>(next_words.front()[0])) != 0;
    bool gap = blocks[b + 1].start_s - blocks[b].end_s >= gap_seconds;
    if (capitalized || gap) out.push_back({".", blocks[b].end_s, blocks[b].end_s});
  }
  return out;
}

std::vector<std::vector<TimedWord>> segment_sentences(const std::vector<TimedWord>& words) {
  std::vector<std::vector<TimedWord>> sentences;
  std::vector<TimedWord> current;
  for (const TimedWord& word : words) {
    if (is_terminal_punct(word.text)) {
      if (!current.empty()) sentences.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(word);
    }
  }
  // A trailing fragment with no terminal punctuation is incomplete.
  return sentences;
}

std::pair<double, double> extract_clip_span(const std::vector<TimedWord>& words) {
  if (words.empty()) throw std::invalid_argument("extract_clip_span: empty sentence");
  return {words.front().start_s, words.back().end_s};
}

namespace {

std::string file_stem(const std::string& path) {
  size_t slash = path.find_last_of("/\\");
  std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
  size_t dot = name.find('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

}  // namespace

HarvestReport harvest(const std::vector<std::string>& subtitle_files,
                      const std::vector<std::string>& excluded_video_ids,
                      const HarvestOptions& options) {
  HarvestReport report;
  PunctuationRestorer restore = options.restorer;
  if (!restore)
    restore = [&options](const std::vector<SubtitleBlock>& blocks) {
      return rule_based_restore(blocks, options.gap_seconds);
    };

  for (const std::string& path : subtitle_files) {
    std::string video_id = file_stem(path);
    if (std::find(excluded_video_ids.begin(), excluded_video_ids.end(), video_id) !=
        excluded_video_ids.end()) {
      ++report.videos_excluded;
      continue;
    }
    try {
      std::vector<SubtitleBlock> blocks = read_webvtt_file(path);
      std::vector<std::vector<TimedWord>> sentences = segment_sentences(restore(blocks));
      long index = 0;
      for (const auto& sentence : sentences) {
        if (static_cast<int>(sentence.size()) >= options.max_tokens) {
          ++report.dropped_long;
          continue;
        }
        SentenceClip clip;
        clip.video_id = video_id;
        clip.id = video_id + ":" + std::to_string(index++);
        for (const TimedWord& word : sentence) clip.tokens.push_back(word.text);
        std::tie(clip.start_s, clip.end_s) = extract_clip_span(sentence);
        report.records.push_back(std::move(clip));
      }
      ++report.videos_processed;
    } catch (const std::exception& err) {
      ++report.files_failed;
      report.errors.push_back(path + ": " + err.what());
    }
  }
  std::stable_sort(report.records.begin(), report.records.end(),
                   [](const SentenceClip& a, const SentenceClip& b) {
                     return a.video_id != b.video_id ? a.video_id < b.video_id
                                                     : a.start_s < b.start_s;
                   });
  return report;
}

std::vector<std::string> read_exclusion_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open exclusion list: " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

void write_corpus(const std::string& path, const std::vector<SentenceClip>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open corpus for writing: " + path);
  for (const SentenceClip& clip : records) {
    nlohmann::json j = {{"id", clip.id},
                        {"video_id", clip.video_id},
                        {"tokens", clip.tokens},
                        {"start_s", clip.start_s},
                        {"end_s", clip.end_s}};
    if (!clip.gold_tree.empty()) j["gold_tree"] = clip.gold_tree;
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("failed writing corpus: " + path);
}

std::vector<SentenceClip> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus: " + path);
  std::vector<SentenceClip> records;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      SentenceClip clip;
      clip.id = j.at("id").get<std::string>();
      clip.video_id = j.at("video_id").get<std::string>();
      clip.tokens = j.at("tokens").get<std::vector<std::string>>();
      clip.start_s = j.at("start_s").get<double>();
      clip.end_s = j.at("end_s").get<double>();
      if (j.contains("gold_tree")) clip.gold_tree = j["gold_tree"].get<std::string>();
      if (clip.tokens.empty()) throw std::runtime_error("empty token list");
      records.push_back(std::move(clip));
    } catch (const std::exception& err) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + err.what());
    }
  }
  return records;
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnkId : it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& raw_tokens) const {
  std::vector<int> ids;
  for (const std::string& token : preprocess_tokens(raw_tokens)) ids.push_back(id(token));
  return ids;
}

Vocabulary build_vocab(const std::vector<SentenceClip>& corpus, int k) {
  if (k < 1) throw std::invalid_argument("build_vocab: k must be >= 1");
  std::map<std::string, long> counts;
  for (const SentenceClip& clip : corpus)
    for (const std::string& token : preprocess_tokens(clip.tokens))
      if (token != kNumToken) ++counts[token];
  if (counts.empty()) throw std::runtime_error("build_vocab: corpus yields no tokens");

  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (static_cast<int>(ranked.size()) > k) ranked.resize(static_cast<size_t>(k));

  Vocabulary vocab;
  vocab.id_to_token = {kUnkToken, kNumToken};
  vocab.token_to_id[kUnkToken] = Vocabulary::kUnkId;
  vocab.token_to_id[kNumToken] = Vocabulary::kNumId;
  for (const auto& [token, count] : ranked) {
    vocab.token_to_id[token] = vocab.size();
    vocab.id_to_token.push_back(token);
  }
  return vocab;
}

void write_vocab(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open vocab for writing: " + path);
  nlohmann::json j = {{"tokens", vocab.id_to_token}};
  out << j.dump(2) << "\n";
}

Vocabulary read_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocab: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& err) {
    throw std::runtime_error(path + ": " + err.what());
  }
  Vocabulary vocab;
  vocab.id_to_token = j.at("tokens").get<std::vector<std::string>>();
  if (vocab.id_to_token.size() < 2 || vocab.id_to_token[0] != kUnkToken ||
      vocab.id_to_token[1] != kNumToken)
    throw std::runtime_error("vocab file missing reserved tokens: " + path);
  for (size_t i = 0; i < vocab.id_to_token.size(); ++i)
    vocab.token_to_id[vocab.id_to_token[i]] = static_cast<int>(i);
  return vocab;
}

}  // namespace mpcfg
