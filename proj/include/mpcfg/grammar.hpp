#pragma once

#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "mpcfg/params.hpp"
#include "mpcfg/tape.hpp"

namespace mpcfg {

struct GrammarConfig {
  int num_nonterminals = 10;  // |N|
  int num_preterminals = 20;  // |P|
  int vocab_size = 0;         // |Sigma|, includes reserved UNK and NUM ids
  int symbol_dim = 64;
  int z_dim = 16;
  int hidden_dim = 128;

  int n_symbols() const { return num_nonterminals + num_preterminals; }
  void validate() const;
};

// One precomputed feature stream for a video ("video" alone in PTC mode;
// several named experts in MMC mode).
struct ExpertSpec {
  std::string name;
  int dim = 0;
};

// Parameter handles for one tape: every named tensor in a ParamStore gets
// a leaf, so model code addresses parameters by name while gradient code
// walks the same insertion order.
class TapeParams {
 public:
  TapeParams(Tape& t, const ParamStore& store);
  TapeParams(const std::vector<std::string>& names, const std::vector<Var>& vars);

  Var operator[](const std::string& name) const;
  bool has(const std::string& name) const { return vars_.count(name) > 0; }

 private:
  std::unordered_map<std::string, Var> vars_;
};

// All trainable tensors of the compound model: grammar embeddings and
// rule heads, the posterior encoder, and the video/span matching heads.
class CompoundParams {
 public:
  // `experts` may be empty (text-only C-PCFG); PTC uses exactly one
  // expert, MMC several. Biases start at zero, matrices Xavier-uniform;
  // the |N| span heads are duplicates of a single draw.
  CompoundParams(const GrammarConfig& cfg, std::vector<ExpertSpec> experts, int joint_dim,
                 bool mmc, unsigned long seed);

  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const GrammarConfig& config() const { return cfg_; }
  const std::vector<ExpertSpec>& experts() const { return experts_; }
  int joint_dim() const { return joint_dim_; }
  bool mmc() const { return mmc_; }

  static std::string span_head_w(int k) { return "match.head." + std::to_string(k) + ".W"; }
  static std::string span_head_b(int k) { return "match.head." + std::to_string(k) + ".b"; }

 private:
  GrammarConfig cfg_;
  std::vector<ExpertSpec> experts_;
  int joint_dim_;
  bool mmc_;
  ParamStore store_;
};

// Per-sentence log-probability tables (all tape values):
//   start:    {|N|}              log pi_{S->A}
//   binary:   {|N|, n_sym^2}     log pi_{A->BC}, column index B*n_sym+C
//             over the unified symbol order [nonterminals; preterminals]
//   terminal: {|P|, n}           log pi_{T->w_i} per sentence position
struct RuleTable {
  Var start;
  Var binary;
  Var terminal;
  int n_nt = 0;
  int n_pt = 0;

  int n_sym() const { return n_nt + n_pt; }
};

struct PosteriorGaussian {
  Var mu;
  Var logvar;
};

// Shared two-layer residual MLP used for f_s and f_t. Accepts a single
// vector or a matrix of row vectors.
Var residual_mlp(Tape& t, Var x, Var w0, Var b0, Var w1, Var b1, Var w2, Var b2);

// Compound rule probabilities: start rules through f_s([w_S; z]), binary
// rules as direct dot products with [w_A; z], terminal rules through
// f_t([w_T; z]) restricted to the sentence's token columns.
RuleTable rule_log_probs(Tape& t, const TapeParams& p, const GrammarConfig& cfg, Var z,
                         const std::vector<int>& tokens);

// Bidirectional tanh recurrence over word embeddings, max-pooled, then
// two affine heads for the mean and log-variance.
PosteriorGaussian encode_posterior(Tape& t, const TapeParams& p, const GrammarConfig& cfg,
                                   const std::vector<int>& tokens);

PosteriorGaussian standard_prior(Tape& t, int z_dim);

// Reparameterization: z = mu + exp(0.5 * logvar) * noise.
Var sample_z(Tape& t, const PosteriorGaussian& q, const Tensor& noise);

// Closed-form KL(q || p) for diagonal Gaussians, summed over dimensions.
Var kl_diag_gaussians(Tape& t, const PosteriorGaussian& q, const PosteriorGaussian& p);

}  // namespace mpcfg
