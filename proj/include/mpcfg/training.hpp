#pragma once

#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "mpcfg/chart.hpp"
#include "mpcfg/grammar.hpp"
#include "mpcfg/matching.hpp"
#include "mpcfg/params.hpp"

namespace mpcfg {

struct TrainConfig {
  double lr = 0.001;
  double beta1 = 0.75;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 32;
  int epochs = 1;
  int max_length = 40;
  double clip_norm = 5.0;  // <= 0 disables clipping
  unsigned long seed = 0;

  void validate() const;
};

// One training example: token ids plus the precomputed clip features for
// each expert (one entry, in expert order; PTC uses a single expert).
struct TrainItem {
  std::vector<int> tokens;
  std::string video_id;
  std::vector<ClipFeatures> features;
};

struct SentenceElbo {
  Var elbo;
  Var log_likelihood;
  Var kl;
};

// -ELBO pieces for one sentence with reparameterized z = mu + std * noise.
SentenceElbo sentence_elbo(Tape& t, const TapeParams& p, const GrammarConfig& cfg,
                           const std::vector<int>& tokens, const Tensor& noise);

struct BatchLosses {
  Var total;  // sum over items of (-elbo + alpha * s)
  double elbo = 0.0;
  double kl = 0.0;
  double log_likelihood = 0.0;
  double matching = 0.0;
  int items = 0;
  bool matching_skipped = false;  // no in-batch negatives available
};

BatchLosses batch_loss(Tape& t, const TapeParams& p, const GrammarConfig& cfg,
                       const MatchConfig& mcfg, const std::vector<ExpertSpec>& experts,
                       const std::vector<const TrainItem*>& batch, std::mt19937_64& rng);

struct AdamState {
  explicit AdamState(const ParamStore& store);
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
};

// Gradients are kept in ParamStore name order throughout.
std::vector<Tensor> collect_grads(const Tape& t, const TapeParams& p,
                                  const std::vector<std::string>& names);
double grad_global_norm(const std::vector<Tensor>& grads);
void clip_gradients(std::vector<Tensor>& grads, double max_norm);
// Bias-corrected Adam update; throws NonFiniteError before touching any
// parameter if a gradient is not finite.
void adam_step(ParamStore& store, const std::vector<Tensor>& grads, AdamState& state,
               const TrainConfig& cfg);

struct StepMetrics {
  long step = 0;
  double elbo = 0.0;
  double kl = 0.0;
  double log_likelihood = 0.0;
  double matching_loss = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct TrainReport {
  long steps = 0;
  long skipped_sentences = 0;  // too short / too long for training
  long failed_steps = 0;       // non-finite loss or gradients
  bool matching_warned = false;
  double final_total = 0.0;
  std::vector<StepMetrics> metrics;
};

// Minibatch training over the whole item list; metrics_out, when given,
// receives one JSON object per step.
TrainReport train(CompoundParams& params, const TrainConfig& tcfg, const MatchConfig& mcfg,
                  const std::vector<TrainItem>& data, std::ostream* metrics_out);

}  // namespace mpcfg
