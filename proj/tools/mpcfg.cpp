// Command-line surface: harvest subtitles into a corpus, train a model,
// parse with a checkpoint, evaluate bracketings against gold trees.
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mpcfg/chart.hpp"
#include "mpcfg/checkpoint.hpp"
#include "mpcfg/data.hpp"
#include "mpcfg/eval.hpp"
#include "mpcfg/grammar.hpp"
#include "mpcfg/matching.hpp"
#include "mpcfg/run_config.hpp"
#include "mpcfg/training.hpp"

namespace fs = std::filesystem;
using namespace mpcfg;

namespace {

// "--experts scene:2048,audio:128" or just names; dim 0 = infer.
std::vector<ExpertSpec> parse_expert_list(const std::string& text) {
  std::vector<ExpertSpec> experts;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    size_t colon = part.find(':');
    ExpertSpec e;
    if (colon == std::string::npos) {
      e.name = part;
    } else {
      e.name = part.substr(0, colon);
      try {
        e.dim = std::stoi(part.substr(colon + 1));
      } catch (const std::exception&) {
        throw ConfigError("bad expert spec '" + part + "' (want name or name:dim)");
      }
    }
    experts.push_back(e);
  }
  if (experts.empty()) throw ConfigError("empty expert list");
  return experts;
}

void require_path(const std::string& value, const std::string& what) {
  if (value.empty()) throw ConfigError("missing required path: " + what);
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write to " + path);
  return out;
}

int cmd_harvest(const RunConfig& cfg) {
  require_path(cfg.paths.subtitles_dir, "paths.subtitles_dir");
  require_path(cfg.paths.output, "paths.output");
  fs::path dir(cfg.paths.subtitles_dir);
  if (!fs::is_directory(dir))
    throw std::runtime_error("subtitles directory not found: " + dir.string());

  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    if (ext == ".vtt" || ext == ".webvtt" || ext == ".srt")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());

  std::vector<std::string> excluded;
  if (!cfg.paths.exclusions.empty()) excluded = read_exclusion_list(cfg.paths.exclusions);

  HarvestOptions options;
  options.gap_seconds = cfg.harvest.gap_seconds;
  options.max_tokens = cfg.harvest.max_tokens;
  HarvestReport report = harvest(files, excluded, options);
  write_corpus(cfg.paths.output, report.records);

  nlohmann::json summary{{"records", report.records.size()},
                         {"videos_processed", report.videos_processed},
                         {"videos_excluded", report.videos_excluded},
                         {"files_failed", report.files_failed},
                         {"dropped_long", report.dropped_long},
                         {"output", cfg.paths.output}};
  std::cout << summary.dump(2) << "\n";
  for (const auto& e : report.errors) std::cerr << "warning: " << e << "\n";
  return 0;
}

// Loads every expert stream for every distinct video in the corpus,
// resolving dim-0 expert specs from the first file seen.
std::map<std::string, std::vector<ClipFeatures>> load_features(
    const std::vector<SentenceClip>& records, const RunConfig& cfg,
    std::vector<ExpertSpec>& experts) {
  std::map<std::string, std::vector<ClipFeatures>> by_video;
  for (const auto& rec : records) {
    if (by_video.count(rec.video_id)) continue;
    std::vector<ClipFeatures> streams;
    for (auto& expert : experts) {
      // Single-stream models use the bare <video_id>.vfea naming.
      std::string suffix = cfg.model == "ptc" ? std::string() : expert.name;
      std::string path = feature_path(cfg.paths.features_dir, rec.video_id, suffix);
      if (!fs::exists(path)) throw std::runtime_error("missing feature file: " + path);
      ClipFeatures feats = read_features(path);
      int dim = static_cast<int>(feats.clips.cols());
      if (expert.dim == 0)
        expert.dim = dim;
      else if (expert.dim != dim)
        throw std::runtime_error("feature dim mismatch for expert '" + expert.name + "' in " +
                                 path + ": expected " + std::to_string(expert.dim) + ", got " +
                                 std::to_string(dim));
      streams.push_back(std::move(feats));
    }
    by_video.emplace(rec.video_id, std::move(streams));
  }
  return by_video;
}

int cmd_train(const RunConfig& cfg) {
  require_path(cfg.paths.corpus, "paths.corpus");
  require_path(cfg.paths.checkpoint, "paths.checkpoint");
  if (cfg.matching_enabled() && cfg.paths.features_dir.empty())
    throw ConfigError("model '" + cfg.model + "' requires paths.features_dir");

  std::vector<SentenceClip> records = read_corpus(cfg.paths.corpus);
  if (records.empty()) throw std::runtime_error("corpus has no records: " + cfg.paths.corpus);

  Vocabulary vocab = build_vocab(records, cfg.vocab_k);
  GrammarConfig gcfg = cfg.grammar;
  gcfg.vocab_size = vocab.size();

  std::vector<ExpertSpec> experts = cfg.experts;
  std::map<std::string, std::vector<ClipFeatures>> by_video;
  if (cfg.matching_enabled()) by_video = load_features(records, cfg, experts);

  std::vector<TrainItem> items;
  items.reserve(records.size());
  for (const auto& rec : records) {
    TrainItem item;
    item.tokens = vocab.encode(rec.tokens);
    item.video_id = rec.video_id;
    if (cfg.matching_enabled()) item.features = by_video.at(rec.video_id);
    items.push_back(std::move(item));
  }

  CompoundParams params(gcfg, experts, cfg.joint_dim, cfg.model == "mmc", cfg.train.seed);

  std::ofstream metrics_file;
  std::ostream* metrics = nullptr;
  if (!cfg.paths.metrics.empty()) {
    metrics_file = open_output(cfg.paths.metrics);
    metrics = &metrics_file;
  }

  TrainReport report = train(params, cfg.train, cfg.match, items, metrics);
  write_checkpoint(cfg.paths.checkpoint, gcfg, params.store());
  write_vocab(cfg.paths.checkpoint + ".vocab.json", vocab);

  nlohmann::json summary{{"steps", report.steps},
                         {"skipped_sentences", report.skipped_sentences},
                         {"failed_steps", report.failed_steps},
                         {"final_total", report.final_total},
                         {"checkpoint", cfg.paths.checkpoint}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// Rebuilds the best tree's bracketing from its span list; every node
// carries the placeholder label X.
std::string render_tree(const std::vector<Span>& spans, const std::vector<std::string>& words) {
  std::set<std::pair<int, int>> has;
  for (const auto& s : spans) has.insert({s.i, s.j});
  std::function<std::string(int, int)> render = [&](int i, int j) -> std::string {
    if (i == j) return "(X " + words[static_cast<size_t>(i) - 1] + ")";
    for (int s = i; s < j; ++s)
      if (has.count({i, s}) && has.count({s + 1, j})) return "(X " + render(i, s) + " " + render(s + 1, j) + ")";
    throw std::runtime_error("viterbi spans do not form a tree");
  };
  return render(1, static_cast<int>(words.size()));
}

int cmd_parse(const RunConfig& cfg) {
  require_path(cfg.paths.checkpoint, "paths.checkpoint");
  require_path(cfg.paths.corpus, "paths.corpus");

  Checkpoint ck = read_checkpoint(cfg.paths.checkpoint);
  Vocabulary vocab = read_vocab(cfg.paths.checkpoint + ".vocab.json");
  if (vocab.size() != ck.config.vocab_size)
    throw std::runtime_error("vocabulary size " + std::to_string(vocab.size()) +
                             " does not match checkpoint vocab_size " +
                             std::to_string(ck.config.vocab_size));
  std::vector<SentenceClip> records = read_corpus(cfg.paths.corpus);

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!cfg.paths.output.empty()) {
    file = open_output(cfg.paths.output);
    out = &file;
  }

  for (const auto& rec : records) {
    std::vector<std::string> words = preprocess_tokens(rec.tokens);
    std::vector<int> ids = vocab.encode(rec.tokens);
    if (words.empty()) {
      std::cerr << "warning: skipping empty sentence " << rec.id << "\n";
      *out << "\n";
      continue;
    }
    if (words.size() == 1) {
      // A one-word sentence has no binary derivation; emit the only
      // possible bracketing so output lines stay aligned with the corpus.
      std::cerr << "warning: skipping length-1 sentence " << rec.id << "\n";
      *out << "(X " << words[0] << ")\n";
      continue;
    }
    Tape t;
    TapeParams p(t, ck.params);
    PosteriorGaussian q = encode_posterior(t, p, ck.config, ids);
    RuleTable rules = rule_log_probs(t, p, ck.config, q.mu, ids);
    ViterbiTree tree = cyk_viterbi(t, rules);
    *out << render_tree(tree.spans, words) << "\n";
  }
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  require_path(cfg.paths.predictions, "paths.predictions");
  require_path(cfg.paths.corpus, "paths.corpus");

  std::ifstream pred_in(cfg.paths.predictions);
  if (!pred_in) throw std::runtime_error("cannot open predictions: " + cfg.paths.predictions);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(pred_in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  std::vector<SentenceClip> records = read_corpus(cfg.paths.corpus);
  if (lines.size() != records.size())
    throw std::runtime_error("prediction count " + std::to_string(lines.size()) +
                             " does not match corpus size " + std::to_string(records.size()));

  long missing_gold = 0;
  std::vector<SentenceEval> sentences;
  for (size_t i = 0; i < records.size(); ++i) {
    if (records[i].gold_tree.empty()) {
      ++missing_gold;
      continue;
    }
    SentenceEval s;
    s.gold = gold_eval_spans(records[i].gold_tree, records[i].tokens);
    int n = static_cast<int>(preprocess_tokens(records[i].tokens).size());
    if (!lines[i].empty()) {
      PtbTree tree = parse_ptb(lines[i]);
      int leaves = static_cast<int>(tree_leaves(tree).size());
      if (leaves != n)
        throw std::runtime_error("line " + std::to_string(i + 1) + ": prediction has " +
                                 std::to_string(leaves) + " leaves, corpus sentence has " +
                                 std::to_string(n) + " evaluated tokens");
      s.pred = eval_filter(tree_spans(tree), n);
    }
    sentences.push_back(std::move(s));
  }

  EvalReport report = evaluate(sentences);
  report.skipped_sentences += missing_gold;
  std::string json = report.to_json();
  std::cout << json << "\n";
  if (!cfg.paths.report.empty()) open_output(cfg.paths.report) << json << "\n";
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"grammar induction from subtitle text and video features"};
  app.require_subcommand(1);

  std::string config_path;
  std::string preset = "desk";
  bool print_config = false;
  app.add_option("--config", config_path, "TOML config file")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.add_option("--preset", preset, "base config before file/flags: desk or full")
      ->check(CLI::IsMember({"desk", "full"}))
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.add_flag("--print-config", print_config, "echo the effective config and exit");

  // Overrides are recorded and applied on top of preset + file in the
  // order listed here; a repeated flag takes its last value.
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> overrides;
  auto opt = [&](const std::string& flag, auto& slot, const std::string& help,
                 std::function<void(RunConfig&)> apply) {
    CLI::Option* o = app.add_option(flag, slot, help)
                         ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    overrides.emplace_back(o, std::move(apply));
    return o;
  };

  std::string model, experts_flag;
  unsigned long seed = 0;
  double lr = 0, alpha = 0, margin = 0, clip_norm = 0, gap_seconds = 0;
  int batch_size = 0, epochs = 0, max_length = 0, clips = 0, frames = 0;
  int nonterminals = 0, preterminals = 0, symbol_dim = 0, z_dim = 0, hidden_dim = 0;
  int vocab_k = 0, joint_dim = 0, max_tokens = 0;
  PathConfig paths;

  opt("--model", model, "cpcfg, ptc, or mmc", [&](RunConfig& c) { c.model = model; });
  opt("--seed", seed, "training seed", [&](RunConfig& c) { c.train.seed = seed; });
  opt("--lr", lr, "learning rate", [&](RunConfig& c) { c.train.lr = lr; });
  opt("--batch-size", batch_size, "minibatch size",
      [&](RunConfig& c) { c.train.batch_size = batch_size; });
  opt("--epochs", epochs, "training epochs", [&](RunConfig& c) { c.train.epochs = epochs; });
  opt("--max-length", max_length, "longest trainable sentence",
      [&](RunConfig& c) { c.train.max_length = max_length; });
  opt("--clip-norm", clip_norm, "gradient norm clip (<= 0 disables)",
      [&](RunConfig& c) { c.train.clip_norm = clip_norm; });
  opt("--alpha", alpha, "matching loss weight", [&](RunConfig& c) { c.match.alpha = alpha; });
  opt("--margin", margin, "hinge margin", [&](RunConfig& c) { c.match.margin = margin; });
  opt("--clips", clips, "clips sampled per video",
      [&](RunConfig& c) { c.match.clips_to_sample = clips; });
  opt("--frames", frames, "frames per clip (metadata)",
      [&](RunConfig& c) { c.match.frames_per_clip = frames; });
  opt("--nonterminals", nonterminals, "|N|",
      [&](RunConfig& c) { c.grammar.num_nonterminals = nonterminals; });
  opt("--preterminals", preterminals, "|P|",
      [&](RunConfig& c) { c.grammar.num_preterminals = preterminals; });
  opt("--symbol-dim", symbol_dim, "symbol embedding width",
      [&](RunConfig& c) { c.grammar.symbol_dim = symbol_dim; });
  opt("--z-dim", z_dim, "latent width", [&](RunConfig& c) { c.grammar.z_dim = z_dim; });
  opt("--hidden-dim", hidden_dim, "MLP/encoder width",
      [&](RunConfig& c) { c.grammar.hidden_dim = hidden_dim; });
  opt("--vocab-k", vocab_k, "vocabulary size cap", [&](RunConfig& c) { c.vocab_k = vocab_k; });
  opt("--joint-dim", joint_dim, "shared matching embedding width",
      [&](RunConfig& c) { c.joint_dim = joint_dim; });
  opt("--experts", experts_flag, "expert list: name[:dim],...",
      [&](RunConfig& c) { c.experts = parse_expert_list(experts_flag); });
  opt("--gap-seconds", gap_seconds, "silence gap treated as a sentence break",
      [&](RunConfig& c) { c.harvest.gap_seconds = gap_seconds; });
  opt("--max-tokens", max_tokens, "harvested sentences this long are dropped",
      [&](RunConfig& c) { c.harvest.max_tokens = max_tokens; });
  opt("--subtitles-dir", paths.subtitles_dir, "directory of .vtt files",
      [&](RunConfig& c) { c.paths.subtitles_dir = paths.subtitles_dir; });
  opt("--exclusions", paths.exclusions, "file of video ids to skip",
      [&](RunConfig& c) { c.paths.exclusions = paths.exclusions; });
  opt("--corpus", paths.corpus, "corpus JSONL",
      [&](RunConfig& c) { c.paths.corpus = paths.corpus; });
  opt("--features-dir", paths.features_dir, "directory of .vfea files",
      [&](RunConfig& c) { c.paths.features_dir = paths.features_dir; });
  opt("--checkpoint", paths.checkpoint, "model file",
      [&](RunConfig& c) { c.paths.checkpoint = paths.checkpoint; });
  opt("--metrics", paths.metrics, "step metrics JSONL",
      [&](RunConfig& c) { c.paths.metrics = paths.metrics; });
  opt("--output", paths.output, "harvest corpus / parse bracketings",
      [&](RunConfig& c) { c.paths.output = paths.output; });
  opt("--predictions", paths.predictions, "bracketings to evaluate",
      [&](RunConfig& c) { c.paths.predictions = paths.predictions; });
  opt("--report", paths.report, "evaluation report JSON",
      [&](RunConfig& c) { c.paths.report = paths.report; });

  CLI::App* harvest_cmd = app.add_subcommand("harvest", "subtitles -> sentence/clip corpus");
  CLI::App* train_cmd = app.add_subcommand("train", "corpus (+features) -> checkpoint");
  CLI::App* parse_cmd = app.add_subcommand("parse", "checkpoint + corpus -> bracketings");
  CLI::App* eval_cmd = app.add_subcommand("eval", "bracketings vs gold trees -> report");
  for (CLI::App* sub : {harvest_cmd, train_cmd, parse_cmd, eval_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  RunConfig cfg = preset == "full" ? RunConfig::full_scale() : RunConfig();
  if (!config_path.empty()) cfg = read_run_config(config_path, cfg);
  for (const auto& [option, apply] : overrides)
    if (option->count() > 0) apply(cfg);
  apply_model_mode(cfg);
  cfg.validate();

  if (print_config) {
    std::cout << cfg.serialize();
    return 0;
  }
  if (harvest_cmd->parsed()) return cmd_harvest(cfg);
  if (train_cmd->parsed()) return cmd_train(cfg);
  if (parse_cmd->parsed()) return cmd_parse(cfg);
  return cmd_eval(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
