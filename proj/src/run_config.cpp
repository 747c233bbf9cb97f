#include "mpcfg/run_config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace mpcfg {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Integral values print as integers so echoed configs read the way they
// were written (alpha = 1, clip_norm = 5); everything else keeps enough
// digits to round-trip the literals we care about.
std::string fmt_number(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15)
    return std::to_string(static_cast<long long>(v));
  std::ostringstream os;
  os.precision(15);
  os << v;
  return os.str();
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

[[noreturn]] void fail(int line, const std::string& what) {
  throw ConfigError("config line " + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& v, int line) {
  try {
    size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) fail(line, "trailing characters in number '" + v + "'");
    return d;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    fail(line, "expected a number, got '" + v + "'");
  }
}

long long parse_int(const std::string& v, int line) {
  try {
    size_t used = 0;
    long long i = std::stoll(v, &used);
    if (used != v.size()) fail(line, "trailing characters in integer '" + v + "'");
    return i;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    fail(line, "expected an integer, got '" + v + "'");
  }
}

std::string parse_string(const std::string& v, int line) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  if (!v.empty() && v.front() == '"') fail(line, "unterminated string");
  return v;  // bare words allowed for enum-like values
}

// Strips a # comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
  bool in_quote = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_quote = !in_quote;
    if (line[i] == '#' && !in_quote) return line.substr(0, i);
  }
  return line;
}

void set_path(PathConfig& p, const std::string& key, const std::string& value, int line) {
  if (key == "subtitles_dir")
    p.subtitles_dir = value;
  else if (key == "exclusions")
    p.exclusions = value;
  else if (key == "corpus")
    p.corpus = value;
  else if (key == "features_dir")
    p.features_dir = value;
  else if (key == "checkpoint")
    p.checkpoint = value;
  else if (key == "metrics")
    p.metrics = value;
  else if (key == "output")
    p.output = value;
  else if (key == "predictions")
    p.predictions = value;
  else if (key == "report")
    p.report = value;
  else
    fail(line, "unknown key 'paths." + key + "'");
}

}  // namespace

void HarvestConfig::validate() const {
  if (gap_seconds < 0.0)
    throw std::invalid_argument("harvest config: gap_seconds must be non-negative");
  if (max_tokens < 2) throw std::invalid_argument("harvest config: max_tokens must be >= 2");
}

void RunConfig::validate() const {
  if (model != "cpcfg" && model != "ptc" && model != "mmc")
    throw ConfigError("model must be one of cpcfg, ptc, mmc (got '" + model + "')");
  if (grammar.num_nonterminals <= 0 || grammar.num_preterminals <= 0 ||
      grammar.symbol_dim <= 0 || grammar.z_dim <= 0 || grammar.hidden_dim <= 0)
    throw ConfigError("grammar dimensions must be positive");
  if (grammar.vocab_size < 0) throw ConfigError("vocab_size must be non-negative");
  if (vocab_k <= 0) throw ConfigError("vocab_k must be positive");
  if (joint_dim <= 0) throw ConfigError("joint_dim must be positive");
  train.validate();
  match.validate();
  harvest.validate();
  for (size_t a = 0; a < experts.size(); ++a) {
    if (experts[a].name.empty()) throw ConfigError("expert names must be non-empty");
    if (experts[a].dim < 0) throw ConfigError("expert dims must be non-negative");
    for (size_t b = a + 1; b < experts.size(); ++b)
      if (experts[a].name == experts[b].name)
        throw ConfigError("duplicate expert name '" + experts[a].name + "'");
  }
  if (model == "mmc" && experts.empty())
    throw ConfigError("mmc model requires at least one expert");
  if (model == "ptc" && experts.size() > 1)
    throw ConfigError("ptc model uses a single feature stream; got " +
                      std::to_string(experts.size()) + " experts");
}

RunConfig RunConfig::full_scale() {
  RunConfig cfg;
  cfg.model = "ptc";
  cfg.grammar.num_nonterminals = 30;
  cfg.grammar.num_preterminals = 60;
  cfg.grammar.symbol_dim = 256;
  cfg.grammar.z_dim = 64;
  cfg.grammar.hidden_dim = 512;
  // TrainConfig defaults already carry the reference optimizer settings
  // (lr 0.001, betas 0.75/0.999, batch 32, one epoch, max length 40).
  cfg.match.alpha = 1.0;
  cfg.match.clips_to_sample = 8;
  cfg.match.frames_per_clip = 16;
  cfg.vocab_k = 20000;
  cfg.joint_dim = 512;
  cfg.experts = {{"video", 0}};
  return cfg;
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "model = " << quote(model) << "\n\n";
  os << "[grammar]\n";
  os << "num_nonterminals = " << grammar.num_nonterminals << "\n";
  os << "num_preterminals = " << grammar.num_preterminals << "\n";
  os << "vocab_size = " << grammar.vocab_size << "\n";
  os << "symbol_dim = " << grammar.symbol_dim << "\n";
  os << "z_dim = " << grammar.z_dim << "\n";
  os << "hidden_dim = " << grammar.hidden_dim << "\n\n";
  os << "[train]\n";
  os << "lr = " << fmt_number(train.lr) << "\n";
  os << "beta1 = " << fmt_number(train.beta1) << "\n";
  os << "beta2 = " << fmt_number(train.beta2) << "\n";
  os << "adam_eps = " << fmt_number(train.adam_eps) << "\n";
  os << "batch_size = " << train.batch_size << "\n";
  os << "epochs = " << train.epochs << "\n";
  os << "max_length = " << train.max_length << "\n";
  os << "clip_norm = " << fmt_number(train.clip_norm) << "\n";
  os << "seed = " << train.seed << "\n\n";
  os << "[match]\n";
  os << "margin = " << fmt_number(match.margin) << "\n";
  os << "alpha = " << fmt_number(match.alpha) << "\n";
  os << "clips_to_sample = " << match.clips_to_sample << "\n";
  os << "frames_per_clip = " << match.frames_per_clip << "\n\n";
  os << "[harvest]\n";
  os << "gap_seconds = " << fmt_number(harvest.gap_seconds) << "\n";
  os << "max_tokens = " << harvest.max_tokens << "\n\n";
  os << "[data]\n";
  os << "vocab_k = " << vocab_k << "\n";
  os << "joint_dim = " << joint_dim << "\n";
  if (!experts.empty()) {
    os << "\n[experts]\n";
    for (const auto& e : experts) os << e.name << " = " << e.dim << "\n";
  }
  std::ostringstream ps;
  auto path_line = [&ps](const char* key, const std::string& value) {
    if (!value.empty()) ps << key << " = " << quote(value) << "\n";
  };
  path_line("subtitles_dir", paths.subtitles_dir);
  path_line("exclusions", paths.exclusions);
  path_line("corpus", paths.corpus);
  path_line("features_dir", paths.features_dir);
  path_line("checkpoint", paths.checkpoint);
  path_line("metrics", paths.metrics);
  path_line("output", paths.output);
  path_line("predictions", paths.predictions);
  path_line("report", paths.report);
  if (!ps.str().empty()) os << "\n[paths]\n" << ps.str();
  return os.str();
}

void apply_model_mode(RunConfig& cfg) {
  if (cfg.model == "cpcfg") {
    cfg.match.alpha = 0.0;
    cfg.experts.clear();
  } else if (cfg.model == "ptc") {
    cfg.match.mode = MatchMode::kPtc;
    if (cfg.experts.empty()) cfg.experts = {{"video", 0}};
  } else if (cfg.model == "mmc") {
    cfg.match.mode = MatchMode::kMmc;
  }
}

RunConfig parse_run_config(const std::string& text, const RunConfig& base) {
  RunConfig cfg = base;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  bool experts_reset = false;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "grammar" && section != "train" && section != "match" &&
          section != "harvest" && section != "data" && section != "experts" &&
          section != "paths")
        fail(line_no, "unknown section [" + section + "]");
      // The first [experts] mention replaces the inherited list so a file
      // can shrink it, not only extend it.
      if (section == "experts" && !experts_reset) {
        cfg.experts.clear();
        experts_reset = true;
      }
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(line_no, "empty key");
    if (value.empty()) fail(line_no, "empty value for '" + key + "'");

    if (section.empty()) {
      if (key == "model")
        cfg.model = parse_string(value, line_no);
      else
        fail(line_no, "unknown top-level key '" + key + "'");
    } else if (section == "grammar") {
      long long v = parse_int(value, line_no);
      if (key == "num_nonterminals")
        cfg.grammar.num_nonterminals = static_cast<int>(v);
      else if (key == "num_preterminals")
        cfg.grammar.num_preterminals = static_cast<int>(v);
      else if (key == "vocab_size")
        cfg.grammar.vocab_size = static_cast<int>(v);
      else if (key == "symbol_dim")
        cfg.grammar.symbol_dim = static_cast<int>(v);
      else if (key == "z_dim")
        cfg.grammar.z_dim = static_cast<int>(v);
      else if (key == "hidden_dim")
        cfg.grammar.hidden_dim = static_cast<int>(v);
      else
        fail(line_no, "unknown key 'grammar." + key + "'");
    } else if (section == "train") {
      if (key == "lr")
        cfg.train.lr = parse_double(value, line_no);
      else if (key == "beta1")
        cfg.train.beta1 = parse_double(value, line_no);
      else if (key == "beta2")
        cfg.train.beta2 = parse_double(value, line_no);
      else if (key == "adam_eps")
        cfg.train.adam_eps = parse_double(value, line_no);
      else if (key == "batch_size")
        cfg.train.batch_size = static_cast<int>(parse_int(value, line_no));
      else if (key == "epochs")
        cfg.train.epochs = static_cast<int>(parse_int(value, line_no));
      else if (key == "max_length")
        cfg.train.max_length = static_cast<int>(parse_int(value, line_no));
      else if (key == "clip_norm")
        cfg.train.clip_norm = parse_double(value, line_no);
      else if (key == "seed")
        cfg.train.seed = static_cast<unsigned long>(parse_int(value, line_no));
      else
        fail(line_no, "unknown key 'train." + key + "'");
    } else if (section == "match") {
      if (key == "margin")
        cfg.match.margin = parse_double(value, line_no);
      else if (key == "alpha")
        cfg.match.alpha = parse_double(value, line_no);
      else if (key == "clips_to_sample")
        cfg.match.clips_to_sample = static_cast<int>(parse_int(value, line_no));
      else if (key == "frames_per_clip")
        cfg.match.frames_per_clip = static_cast<int>(parse_int(value, line_no));
      else
        fail(line_no, "unknown key 'match." + key + "'");
    } else if (section == "harvest") {
      if (key == "gap_seconds")
        cfg.harvest.gap_seconds = parse_double(value, line_no);
      else if (key == "max_tokens")
        cfg.harvest.max_tokens = static_cast<int>(parse_int(value, line_no));
      else
        fail(line_no, "unknown key 'harvest." + key + "'");
    } else if (section == "data") {
      if (key == "vocab_k")
        cfg.vocab_k = static_cast<int>(parse_int(value, line_no));
      else if (key == "joint_dim")
        cfg.joint_dim = static_cast<int>(parse_int(value, line_no));
      else
        fail(line_no, "unknown key 'data." + key + "'");
    } else if (section == "experts") {
      for (const auto& e : cfg.experts)
        if (e.name == key) fail(line_no, "duplicate expert '" + key + "'");
      cfg.experts.push_back({key, static_cast<int>(parse_int(value, line_no))});
    } else {  // paths
      set_path(cfg.paths, key, parse_string(value, line_no), line_no);
    }
  }
  return cfg;
}

RunConfig read_run_config(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), base);
}

}  // namespace mpcfg
