#include "mpcfg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "json.hpp"

namespace mpcfg {

void TrainConfig::validate() const {
  if (lr <= 0.0) throw std::invalid_argument("train config: lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw std::invalid_argument("train config: betas must lie in [0, 1)");
  if (adam_eps <= 0.0) throw std::invalid_argument("train config: adam_eps must be positive");
  if (batch_size <= 0 || epochs <= 0 || max_length < 2)
    throw std::invalid_argument("train config: batch_size/epochs/max_length out of range");
}

SentenceElbo sentence_elbo(Tape& t, const TapeParams& p, const GrammarConfig& cfg,
                           const std::vector<int>& tokens, const Tensor& noise) {
  PosteriorGaussian q = encode_posterior(t, p, cfg, tokens);
  Var z = sample_z(t, q, noise);
  RuleTable rules = rule_log_probs(t, p, cfg, z, tokens);
  InsideChart chart = inside(t, rules, static_cast<int>(tokens.size()));
  Var kl = kl_diag_gaussians(t, q, standard_prior(t, cfg.z_dim));
  return {sub(t, chart.log_likelihood, kl), chart.log_likelihood, kl};
}

namespace {

Tensor draw_noise(std::mt19937_64& rng, int z_dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor noise = Tensor::zeros({z_dim});
  for (int d = 0; d < z_dim; ++d) noise.at(d) = normal(rng);
  return noise;
}

// Uniform index over [0, count) excluding `self`.
int draw_other(std::mt19937_64& rng, int count, int self) {
  std::uniform_int_distribution<int> dist(0, count - 2);
  int other = dist(rng);
  return other >= self ? other + 1 : other;
}

}  // namespace

BatchLosses batch_loss(Tape& t, const TapeParams& p, const GrammarConfig& cfg,
                       const MatchConfig& mcfg, const std::vector<ExpertSpec>& experts,
                       const std::vector<const TrainItem*>& batch, std::mt19937_64& rng) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  mcfg.validate();
  const int nb = static_cast<int>(batch.size());
  const bool want_match = mcfg.alpha > 0.0 && !experts.empty();
  const bool mmc = mcfg.mode == MatchMode::kMmc;

  struct ItemEnc {
    SentenceElbo parts;
    Marginals marg;
    std::vector<Var> span_vecs;
    Var video;             // PTC joint-space vector
    std::vector<Var> psi;  // MMC per-expert vectors
  };
  std::vector<ItemEnc> encs(static_cast<size_t>(nb));

  for (int b = 0; b < nb; ++b) {
    const TrainItem& item = *batch[b];
    const int n = static_cast<int>(item.tokens.size());
    if (n < 2) throw std::invalid_argument("batch_loss: sentences must have >= 2 tokens");
    ItemEnc& enc = encs[b];

    PosteriorGaussian q = encode_posterior(t, p, cfg, item.tokens);
    Var z = sample_z(t, q, draw_noise(rng, cfg.z_dim));
    RuleTable rules = rule_log_probs(t, p, cfg, z, item.tokens);
    InsideChart chart = inside(t, rules, n);
    Var kl = kl_diag_gaussians(t, q, standard_prior(t, cfg.z_dim));
    enc.parts = {sub(t, chart.log_likelihood, kl), chart.log_likelihood, kl};

    if (!want_match) continue;
    if (item.features.size() != experts.size())
      throw std::invalid_argument("batch_loss: item feature count does not match experts");
    enc.marg = span_marginals(t, rules, chart);
    Var acts = span_token_activations(t, p, item.tokens);
    enc.span_vecs.reserve(enc.marg.spans.size());
    for (size_t s = 0; s < enc.marg.spans.size(); ++s) {
      Var tau = span_tau(t, acts, enc.marg.spans[s].i, enc.marg.spans[s].j);
      enc.span_vecs.push_back(
          encode_span_ptc(t, p, cfg.num_nonterminals, tau, enc.marg.label_post[s]));
    }
    if (mmc) {
      for (size_t e = 0; e < experts.size(); ++e)
        enc.psi.push_back(
            encode_video_expert_mmc(t, p, experts[e].name, item.features[e].clips));
    } else {
      enc.video = encode_video_ptc(
          t, p, experts[0].name, sample_clips(item.features[0], mcfg.clips_to_sample));
    }
  }

  const bool can_match = want_match && nb >= 2;
  BatchLosses out;
  out.items = nb;
  out.matching_skipped = want_match && !can_match;

  Var total;
  for (int b = 0; b < nb; ++b) {
    ItemEnc& enc = encs[b];
    Var item_loss = neg(t, enc.parts.elbo);
    if (can_match) {
      std::vector<Var> hinges;
      hinges.reserve(enc.marg.spans.size());
      for (size_t s = 0; s < enc.marg.spans.size(); ++s) {
        int span_src = draw_other(rng, nb, b);
        std::uniform_int_distribution<int> span_pick(
            0, static_cast<int>(encs[span_src].span_vecs.size()) - 1);
        Var c_neg = encs[span_src].span_vecs[static_cast<size_t>(span_pick(rng))];
        int video_src = draw_other(rng, nb, b);
        if (mmc) {
          Var pos = mmc_score(t, p, experts, enc.span_vecs[s], enc.psi);
          Var neg_span = mmc_score(t, p, experts, c_neg, enc.psi);
          Var neg_video = mmc_score(t, p, experts, enc.span_vecs[s], encs[video_src].psi);
          hinges.push_back(triplet_hinge_scores(t, pos, neg_span, neg_video, mcfg.margin));
        } else {
          hinges.push_back(triplet_hinge(t, enc.span_vecs[s], enc.video, c_neg,
                                         encs[video_src].video, mcfg.margin));
        }
      }
      Var s_match = matching_loss(t, enc.marg.p_span, hinges);
      out.matching += t.value(s_match).item();
      item_loss = add(t, item_loss, scale(t, s_match, mcfg.alpha));
    }
    out.elbo += t.value(enc.parts.elbo).item();
    out.kl += t.value(enc.parts.kl).item();
    out.log_likelihood += t.value(enc.parts.log_likelihood).item();
    total = b == 0 ? item_loss : add(t, total, item_loss);
  }
  out.total = total;
  return out;
}

AdamState::AdamState(const ParamStore& store) {
  for (const auto& name : store.names()) {
    m.push_back(Tensor::zeros(store.get(name).shape()));
    v.push_back(Tensor::zeros(store.get(name).shape()));
  }
}

std::vector<Tensor> collect_grads(const Tape& t, const TapeParams& p,
                                  const std::vector<std::string>& names) {
  std::vector<Tensor> grads;
  grads.reserve(names.size());
  for (const auto& name : names) grads.push_back(t.grad(p[name]));
  return grads;
}

double grad_global_norm(const std::vector<Tensor>& grads) {
  double sq = 0.0;
  for (const Tensor& g : grads) sq += (g.array() * g.array()).sum();
  return std::sqrt(sq);
}

void clip_gradients(std::vector<Tensor>& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double norm = grad_global_norm(grads);
  if (norm <= max_norm || norm == 0.0) return;
  double factor = max_norm / norm;
  for (Tensor& g : grads) g.array() *= factor;
}

void adam_step(ParamStore& store, const std::vector<Tensor>& grads, AdamState& state,
               const TrainConfig& cfg) {
  const auto& names = store.names();
  if (grads.size() != names.size() || state.m.size() != names.size())
    throw std::invalid_argument("adam_step: gradient/state count mismatch");
  for (const Tensor& g : grads)
    if (!g.all_finite()) throw NonFiniteError("adam_step: non-finite gradient");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < names.size(); ++i) {
    Array2d& m = state.m[i].array();
    Array2d& v = state.v[i].array();
    const Array2d& g = grads[i].array();
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.square();
    store.get(names[i]).array() -= cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.adam_eps);
  }
}

TrainReport train(CompoundParams& params, const TrainConfig& tcfg, const MatchConfig& mcfg,
                  const std::vector<TrainItem>& data, std::ostream* metrics_out) {
  tcfg.validate();
  mcfg.validate();
  const GrammarConfig& cfg = params.config();
  TrainReport report;

  std::vector<int> usable;
  for (size_t i = 0; i < data.size(); ++i) {
    int n = static_cast<int>(data[i].tokens.size());
    if (n >= 2 && n <= tcfg.max_length)
      usable.push_back(static_cast<int>(i));
    else
      ++report.skipped_sentences;
  }
  if (usable.empty()) throw std::invalid_argument("train: no trainable sentences");

  std::mt19937_64 rng(tcfg.seed);
  AdamState adam(params.store());
  const std::vector<std::string> names = params.store().names();

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::shuffle(usable.begin(), usable.end(), rng);
    for (size_t off = 0; off < usable.size(); off += static_cast<size_t>(tcfg.batch_size)) {
      size_t end = std::min(usable.size(), off + static_cast<size_t>(tcfg.batch_size));
      std::vector<const TrainItem*> batch;
      for (size_t i = off; i < end; ++i) batch.push_back(&data[static_cast<size_t>(usable[i])]);

      auto t0 = std::chrono::steady_clock::now();
      try {
        Tape t;
        TapeParams p(t, params.store());
        BatchLosses bl = batch_loss(t, p, cfg, mcfg, params.experts(), batch, rng);
        if (bl.matching_skipped && !report.matching_warned) {
          std::cerr << "warning: batch of " << bl.items
                    << " has no in-batch negatives; matching term skipped\n";
          report.matching_warned = true;
        }
        t.backward(bl.total);
        std::vector<Tensor> grads = collect_grads(t, p, names);
        double grad_norm = grad_global_norm(grads);
        if (!std::isfinite(grad_norm)) throw NonFiniteError("train: non-finite gradient norm");
        clip_gradients(grads, tcfg.clip_norm);
        double total_value = t.value(bl.total).item();
        adam_step(params.store(), grads, adam, tcfg);

        StepMetrics sm;
        sm.step = ++report.steps;
        sm.elbo = bl.elbo;
        sm.kl = bl.kl;
        sm.log_likelihood = bl.log_likelihood;
        sm.matching_loss = bl.matching;
        sm.total = total_value;
        sm.grad_norm = grad_norm;
        sm.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                               t0)
                         .count();
        report.final_total = sm.total;
        report.metrics.push_back(sm);
        if (metrics_out) {
          nlohmann::json line = {
              {"step", sm.step},           {"elbo", sm.elbo},
              {"kl", sm.kl},               {"log_likelihood", sm.log_likelihood},
              {"matching_loss", sm.matching_loss}, {"total", sm.total},
              {"grad_norm", sm.grad_norm}, {"wall_ms", sm.wall_ms}};
          *metrics_out << line.dump() << "\n";
        }
      } catch (const NonFiniteError&) {
        ++report.failed_steps;
      }
    }
  }
  return report;
}

}  // namespace mpcfg
