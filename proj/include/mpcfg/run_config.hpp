#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "mpcfg/grammar.hpp"
#include "mpcfg/matching.hpp"
#include "mpcfg/training.hpp"

namespace mpcfg {

// Bad flag values, malformed config files, and inconsistent mode/path
// combinations. The CLI maps this (and std::invalid_argument from the
// typed validate()s) to exit code 2; everything else is a data error (3).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PathConfig {
  std::string subtitles_dir;  // harvest input
  std::string exclusions;     // harvest: one video id per line, optional
  std::string corpus;         // train/parse/eval input JSONL
  std::string features_dir;   // train input (ptc/mmc)
  std::string checkpoint;     // train output, parse input
  std::string metrics;        // train metrics JSONL, optional
  std::string output;         // harvest corpus / parse bracketings
  std::string predictions;    // eval input bracketings
  std::string report;         // eval report JSON, optional
};

struct HarvestConfig {
  double gap_seconds = 1.5;
  int max_tokens = 40;

  void validate() const;
};

// Everything one run needs: the typed sub-configs plus mode flags and
// file locations. Defaults are desk scale; full_scale() mirrors the
// reference training regime.
struct RunConfig {
  std::string model = "cpcfg";  // cpcfg | ptc | mmc
  GrammarConfig grammar;
  TrainConfig train;
  MatchConfig match;
  HarvestConfig harvest;
  int vocab_k = 20000;  // K most frequent tokens kept
  int joint_dim = 32;   // shared span/video embedding width
  std::vector<ExpertSpec> experts;  // dim 0 = infer from feature files
  PathConfig paths;

  void validate() const;
  bool matching_enabled() const { return model != "cpcfg"; }

  static RunConfig full_scale();
  std::string serialize() const;
};

// Makes the mode flags self-consistent: cpcfg clears alpha and experts
// (text-only), ptc selects the single-stream matcher and defaults its
// expert name to "video", mmc selects the multi-expert matcher.
void apply_model_mode(RunConfig& cfg);

// TOML subset: [section] headers, key = value lines, # comments, quoted
// strings, bare numbers. Sections mirror the typed configs ([grammar],
// [train], [match], [harvest], [data], [experts], [paths]); `model` sits
// at top level. Unknown keys or sections are errors.
RunConfig parse_run_config(const std::string& text, const RunConfig& base = {});
RunConfig read_run_config(const std::string& path, const RunConfig& base = {});

}  // namespace mpcfg
