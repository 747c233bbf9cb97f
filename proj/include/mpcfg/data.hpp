#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mpcfg {

struct SubtitleBlock {
  std::string text;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct TimedWord {
  std::string text;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct SentenceClip {
  std::string id;
  std::string video_id;
  std::vector<std::string> tokens;
  double start_s = 0.0;
  double end_s = 0.0;
  std::string gold_tree;  // optional PTB bracketing, empty if absent
};

// WebVTT-style cue list: optional WEBVTT header, cues of
// "HH:MM:SS.mmm --> HH:MM:SS.mmm" followed by text lines. Throws on
// malformed timestamps or empty/inverted cue intervals.
std::vector<SubtitleBlock> parse_webvtt(const std::string& content);
std::vector<SubtitleBlock> read_webvtt_file(const std::string& path);

// Equal time division: word i of n spans
// [start + (i-1) * d, start + i * d] with d = (end - start) / n.
// Attached terminal punctuation (. ? ! ,) is split into its own tokens
// sharing the word's interval.
std::vector<TimedWord> assign_word_times(const SubtitleBlock& block);

// Concatenates block words and inserts a "." token at a block boundary
// when the previous block does not already end with terminal punctuation
// and the next block starts with a capitalized word in the source or the
// silence gap is at least gap_seconds. Pluggable: harvest accepts any
// restorer with this signature.
using PunctuationRestorer =
    std::function<std::vector<TimedWord>(const std::vector<SubtitleBlock>&)>;
std::vector<TimedWord> rule_based_restore(const std::vector<SubtitleBlock>& blocks,
                                          double gap_seconds);

// Splits on the terminal punctuation tokens {".", "?", "!"}; delimiters
// are dropped, and a trailing fragment with no terminal punctuation is
// dropped as incomplete.
std::vector<std::vector<TimedWord>> segment_sentences(const std::vector<TimedWord>& words);

// (start of the first word, end of the last word).
std::pair<double, double> extract_clip_span(const std::vector<TimedWord>& words);

struct HarvestOptions {
  double gap_seconds = 1.5;
  int max_tokens = 40;  // sentences with >= max_tokens tokens are dropped
  PunctuationRestorer restorer;  // defaults to the rule-based restorer
};

struct HarvestReport {
  std::vector<SentenceClip> records;
  long videos_processed = 0;
  long videos_excluded = 0;
  long files_failed = 0;
  long dropped_long = 0;
  std::vector<std::string> errors;  // one message per failed file
};

// Full harvesting pipeline over subtitle files (video id = file stem).
// Excluded videos yield no records; malformed files are reported and
// skipped. Records are ordered by (video_id, start_s).
HarvestReport harvest(const std::vector<std::string>& subtitle_files,
                      const std::vector<std::string>& excluded_video_ids,
                      const HarvestOptions& options = {});

std::vector<std::string> read_exclusion_list(const std::string& path);

// Corpus JSONL: {"id", "video_id", "tokens", "start_s", "end_s",
// "gold_tree"?} per line.
void write_corpus(const std::string& path, const std::vector<SentenceClip>& records);
std::vector<SentenceClip> read_corpus(const std::string& path);

struct Vocabulary {
  static constexpr int kUnkId = 0;
  static constexpr int kNumId = 1;

  std::vector<std::string> id_to_token;  // [0] = <unk>, [1] = <num>
  std::map<std::string, int> token_to_id;

  int size() const { return static_cast<int>(id_to_token.size()); }
  // Preprocessed token -> id, UNK fallback.
  int id(const std::string& token) const;
  // Raw tokens -> eval-style preprocessing -> ids.
  std::vector<int> encode(const std::vector<std::string>& raw_tokens) const;
};

// K most frequent tokens after eval-style preprocessing; ties break
// lexicographically; NUM occurrences use the reserved id. Throws when the
// corpus yields no tokens.
Vocabulary build_vocab(const std::vector<SentenceClip>& corpus, int k);

void write_vocab(const std::string& path, const Vocabulary& vocab);
Vocabulary read_vocab(const std::string& path);

}  // namespace mpcfg
