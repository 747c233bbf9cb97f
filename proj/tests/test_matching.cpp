#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <vector>

#include "doctest.h"
#include "mpcfg/grad_check.hpp"
#include "mpcfg/matching.hpp"

using namespace mpcfg;

namespace {

GrammarConfig tiny_config() {
  GrammarConfig cfg;
  cfg.num_nonterminals = 2;
  cfg.num_preterminals = 2;
  cfg.vocab_size = 5;
  cfg.symbol_dim = 3;
  cfg.z_dim = 2;
  cfg.hidden_dim = 4;
  return cfg;
}

Array2d random_clips(int rows, int cols, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Array2d m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

// Scalar triplet hinge recomputed by hand, no tape.
double hinge_by_hand(double pos, double neg_span, double neg_video, double eps) {
  return std::max(0.0, neg_span - pos + eps) + std::max(0.0, neg_video - pos + eps);
}

}  // namespace

TEST_CASE("sample_clips keeps identity, strides long videos, wraps short ones") {
  ClipFeatures f;
  f.clips = random_clips(8, 3, 11);

  Array2d same = sample_clips(f, 8);
  CHECK(same.rows() == 8);
  CHECK((same - f.clips).abs().maxCoeff() == 0.0);

  ClipFeatures wide;
  wide.clips = random_clips(16, 3, 12);
  Array2d strided = sample_clips(wide, 8);
  for (int i = 0; i < 8; ++i)
    CHECK((strided.row(i) - wide.clips.row(2 * i)).abs().maxCoeff() == 0.0);

  ClipFeatures shorty;
  shorty.clips = random_clips(3, 3, 13);
  Array2d wrapped = sample_clips(shorty, 8);
  for (int i = 0; i < 8; ++i)
    CHECK((wrapped.row(i) - shorty.clips.row(i % 3)).abs().maxCoeff() == 0.0);

  ClipFeatures empty;
  empty.clips = Array2d(0, 0);
  CHECK_THROWS_AS(sample_clips(empty, 8), std::invalid_argument);
}

TEST_CASE("sample_clips floor-index schedule for non-divisible lengths") {
  ClipFeatures f;
  f.clips = random_clips(5, 2, 14);
  Array2d out = sample_clips(f, 3);
  // floor(i*5/3) for i = 0,1,2 -> rows 0, 1, 3.
  CHECK((out.row(0) - f.clips.row(0)).abs().maxCoeff() == 0.0);
  CHECK((out.row(1) - f.clips.row(1)).abs().maxCoeff() == 0.0);
  CHECK((out.row(2) - f.clips.row(3)).abs().maxCoeff() == 0.0);
}

TEST_CASE("encode_video_ptc averages the per-clip projections") {
  GrammarConfig cfg = tiny_config();
  CompoundParams params(cfg, {{"video", 3}}, 2, false, 21);
  Tape t;
  TapeParams p(t, params.store());

  // Hand arithmetic: v_j = mean_i (W row_j . clip_i) + b_j.
  Array2d clips = random_clips(4, 3, 22);
  Var v = encode_video_ptc(t, p, "video", clips);
  const Tensor& w = params.store().get("match.video.video.W");
  const Tensor& b = params.store().get("match.video.video.b");
  for (int j = 0; j < 2; ++j) {
    double expect = 0.0;
    for (int i = 0; i < 4; ++i) {
      double row = 0.0;
      for (int d = 0; d < 3; ++d) row += w.at(j, d) * clips(i, d);
      expect += row + b.at(j);
    }
    expect /= 4.0;
    CHECK(t.value(v).at(j) == doctest::Approx(expect).epsilon(1e-12));
  }

  // All clips identical -> v equals the single-clip projection.
  Array2d rep(3, 3);
  for (int i = 0; i < 3; ++i) rep.row(i) = clips.row(0);
  Var v_rep = encode_video_ptc(t, p, "video", rep);
  Var v_one = encode_video_ptc(t, p, "video", clips.topRows(1));
  for (int j = 0; j < 2; ++j)
    CHECK(t.value(v_rep).at(j) == doctest::Approx(t.value(v_one).at(j)).epsilon(1e-12));
}

TEST_CASE("span tau is a max-pool: order-invariant and dominated by maxima") {
  GrammarConfig cfg = tiny_config();
  CompoundParams params(cfg, {{"video", 3}}, 2, false, 31);
  Tape t;
  TapeParams p(t, params.store());

  std::vector<int> tokens = {0, 3, 1, 4};
  Var acts = span_token_activations(t, p, tokens);
  CHECK(t.value(acts).shape()[0] == 4);
  CHECK(t.value(acts).shape()[1] == cfg.hidden_dim);

  // Permuting the tokens inside the span leaves tau unchanged.
  std::vector<int> shuffled = {4, 0, 3, 1};
  Var acts2 = span_token_activations(t, p, shuffled);
  Var tau_a = span_tau(t, acts, 1, 4);
  Var tau_b = span_tau(t, acts2, 1, 4);
  for (int d = 0; d < cfg.hidden_dim; ++d)
    CHECK(t.value(tau_a).at(d) == doctest::Approx(t.value(tau_b).at(d)).epsilon(1e-12));

  // A span of one repeated word pools to that word's activation row.
  std::vector<int> rep = {2, 2};
  Var acts3 = span_token_activations(t, p, rep);
  Var tau_c = span_tau(t, acts3, 1, 2);
  for (int d = 0; d < cfg.hidden_dim; ++d)
    CHECK(t.value(tau_c).at(d) == doctest::Approx(t.value(acts3).at(0, d)).epsilon(1e-12));

  // Activations are relu outputs, so tau is non-negative.
  for (int d = 0; d < cfg.hidden_dim; ++d) CHECK(t.value(tau_a).at(d) >= 0.0);

  CHECK_THROWS_AS(span_tau(t, acts, 0, 2), std::invalid_argument);
  CHECK_THROWS_AS(span_tau(t, acts, 2, 5), std::invalid_argument);
}

TEST_CASE("encode_span_ptc mixes label heads by the label posterior") {
  GrammarConfig cfg = tiny_config();
  CompoundParams params(cfg, {{"video", 3}}, 2, false, 41);
  Tape t;
  TapeParams p(t, params.store());

  Var tau = t.constant(Tensor::vector({0.3, -0.1, 0.7, 0.2}));

  // One-hot posterior -> exactly that head's affine output.
  for (int k = 0; k < cfg.num_nonterminals; ++k) {
    Tensor onehot = Tensor::zeros({cfg.num_nonterminals});
    onehot.at(k) = 1.0;
    Var c = encode_span_ptc(t, p, cfg.num_nonterminals, tau, t.constant(onehot));
    const Tensor& w = params.store().get(CompoundParams::span_head_w(k));
    const Tensor& b = params.store().get(CompoundParams::span_head_b(k));
    for (int j = 0; j < 2; ++j) {
      double expect = b.at(j);
      for (int d = 0; d < 4; ++d) expect += w.at(j, d) * t.value(tau).at(d);
      CHECK(t.value(c).at(j) == doctest::Approx(expect).epsilon(1e-12));
    }
  }

  // General posterior -> convex mix of the head outputs.
  Var post = t.constant(Tensor::vector({0.25, 0.75}));
  Var mixed = encode_span_ptc(t, p, cfg.num_nonterminals, tau, post);
  Tensor e0 = Tensor::zeros({2}), e1 = Tensor::zeros({2});
  e0.at(0) = 1.0;
  e1.at(1) = 1.0;
  Var c0 = encode_span_ptc(t, p, cfg.num_nonterminals, tau, t.constant(e0));
  Var c1 = encode_span_ptc(t, p, cfg.num_nonterminals, tau, t.constant(e1));
  for (int j = 0; j < 2; ++j) {
    double expect = 0.25 * t.value(c0).at(j) + 0.75 * t.value(c1).at(j);
    CHECK(t.value(mixed).at(j) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("triplet hinge: hand cases") {
  Tape t;
  double eps = 0.2;

  // Violations 0.1 and 0.15 -> 0.25.
  Var c = t.constant(Tensor::vector({1.0}));
  Var v = t.constant(Tensor::vector({0.5}));
  Var c_neg = t.constant(Tensor::vector({0.8}));   // c'.v = 0.4
  Var v_neg = t.constant(Tensor::vector({0.45}));  // c.v' = 0.45
  Var h = triplet_hinge(t, c, v, c_neg, v_neg, eps);
  CHECK(t.value(h).item() == doctest::Approx(0.25).epsilon(1e-12));

  // All similarities equal -> both terms sit at the margin: h = 2 eps.
  Var one = t.constant(Tensor::vector({1.0}));
  Var h_tie = triplet_hinge(t, one, one, one, one, eps);
  CHECK(t.value(h_tie).item() == doctest::Approx(2.0 * eps).epsilon(1e-12));

  // Both constraints satisfied by more than the margin -> exactly zero.
  Var cp = t.constant(Tensor::vector({1.0, 0.0}));
  Var vp = t.constant(Tensor::vector({1.0, 0.0}));
  Var cn = t.constant(Tensor::vector({0.0, 0.5}));
  Var vn = t.constant(Tensor::vector({0.0, 0.5}));
  Var h_zero = triplet_hinge(t, cp, vp, cn, vn, eps);
  CHECK(t.value(h_zero).item() == 0.0);

  // Random scores agree with the scalar formula.
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    double pos = dist(rng), ns = dist(rng), nv = dist(rng);
    Var hs = triplet_hinge_scores(t, t.constant(Tensor::scalar(pos)),
                                  t.constant(Tensor::scalar(ns)),
                                  t.constant(Tensor::scalar(nv)), eps);
    CHECK(t.value(hs).item() == doctest::Approx(hinge_by_hand(pos, ns, nv, eps)).epsilon(1e-12));
  }
}

TEST_CASE("matching loss is the posterior-weighted hinge sum") {
  Tape t;
  auto scalar = [&](double x) { return t.constant(Tensor::scalar(x)); };

  // p = (0.5, 0.5), h = (0.2, 0.4) -> 0.3.
  Var s = matching_loss(t, {scalar(0.5), scalar(0.5)}, {scalar(0.2), scalar(0.4)});
  CHECK(t.value(s).item() == doctest::Approx(0.3).epsilon(1e-12));

  // Zero hinges -> zero loss regardless of the posteriors.
  Var z = matching_loss(t, {scalar(0.9), scalar(0.4)}, {scalar(0.0), scalar(0.0)});
  CHECK(t.value(z).item() == 0.0);

  // Loss is linear in the hinges.
  Var twice = matching_loss(t, {scalar(0.5), scalar(0.5)}, {scalar(0.4), scalar(0.8)});
  CHECK(t.value(twice).item() == doctest::Approx(2.0 * t.value(s).item()).epsilon(1e-12));

  CHECK(t.value(matching_loss(t, {}, {})).item() == 0.0);
  CHECK_THROWS_AS(matching_loss(t, {scalar(1.0)}, {}), std::invalid_argument);
}

TEST_CASE("gated embedding: unit norm, zero-gate closed form") {
  GrammarConfig cfg = tiny_config();
  std::vector<ExpertSpec> experts = {{"audio", 3}, {"scene", 4}};
  CompoundParams params(cfg, experts, 3, true, 61);
  Tape t;
  TapeParams p(t, params.store());

  Var x = t.constant(Tensor::vector({0.4, -0.2, 0.9}));
  Var g = gated_embedding(t, p, "audio", x);
  double norm = 0.0;
  for (int j = 0; j < 3; ++j) norm += t.value(g).at(j) * t.value(g).at(j);
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));

  // Zero the gate weights: sigmoid(0) = 0.5 everywhere, so the output is
  // normalize(0.5 * (W1 x + b1)).
  ParamStore zeroed;
  for (const auto& name : params.store().names()) {
    Tensor v = params.store().get(name);
    if (name == "match.gate.scene.W2" || name == "match.gate.scene.b2")
      v.array().setZero();
    zeroed.add(name, v);
  }
  Tape t2;
  TapeParams p2(t2, zeroed);
  Var x2 = t2.constant(Tensor::vector({0.4, -0.2, 0.9}));
  Var g2 = gated_embedding(t2, p2, "scene", x2);
  const Tensor& w1 = zeroed.get("match.gate.scene.W1");
  const Tensor& b1 = zeroed.get("match.gate.scene.b1");
  std::vector<double> z1(3, 0.0);
  double n2 = 0.0;
  for (int j = 0; j < 3; ++j) {
    z1[j] = b1.at(j);
    for (int d = 0; d < 3; ++d) z1[j] += w1.at(j, d) * t2.value(x2).at(d);
    z1[j] *= 0.5;
    n2 += z1[j] * z1[j];
  }
  n2 = std::sqrt(n2);
  for (int j = 0; j < 3; ++j)
    CHECK(t2.value(g2).at(j) == doctest::Approx(z1[j] / n2).epsilon(1e-9));
}

TEST_CASE("mmc score: single expert reduces to cosine, mixtures stay in [-1, 1]") {
  GrammarConfig cfg = tiny_config();

  {
    std::vector<ExpertSpec> experts = {{"solo", 3}};
    CompoundParams params(cfg, experts, 3, true, 71);
    Tape t;
    TapeParams p(t, params.store());
    Var c = t.constant(Tensor::vector({0.2, 0.8, -0.4}));
    Var psi = t.constant(Tensor::vector({1.0, -2.0, 0.5}));
    Var xi = gated_embedding(t, p, "solo", c);
    Var o = mmc_score(t, p, experts, c, {psi});
    CHECK(t.value(o).item() == doctest::Approx(t.value(cosine(t, xi, psi)).item()).epsilon(1e-12));
  }

  std::vector<ExpertSpec> experts = {{"audio", 3}, {"scene", 4}, {"face", 2}};
  CompoundParams params(cfg, experts, 3, true, 72);
  Tape t;
  TapeParams p(t, params.store());
  std::mt19937_64 rng(73);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor cv = Tensor::zeros({3});
    for (int j = 0; j < 3; ++j) cv.at(j) = dist(rng);
    std::vector<Var> psi;
    for (int e = 0; e < 3; ++e) {
      Tensor pv = Tensor::zeros({3});
      for (int j = 0; j < 3; ++j) pv.at(j) = dist(rng);
      psi.push_back(t.constant(pv));
    }
    Var o = mmc_score(t, p, experts, t.constant(cv), psi);
    CHECK(t.value(o).item() >= -1.0 - 1e-12);
    CHECK(t.value(o).item() <= 1.0 + 1e-12);
  }

  // Weighted-mixture oracle: recompute from softmax weights and cosines.
  Tensor cv = Tensor::zeros({3});
  cv.at(0) = 0.6;
  cv.at(1) = -0.3;
  cv.at(2) = 0.1;
  std::vector<Var> psi;
  for (int e = 0; e < 3; ++e) {
    Tensor pv = Tensor::zeros({3});
    for (int j = 0; j < 3; ++j) pv.at(j) = dist(rng);
    psi.push_back(t.constant(pv));
  }
  Var c = t.constant(cv);
  Var o = mmc_score(t, p, experts, c, psi);
  const Tensor& logits_w = params.store().get("match.expert_logits");
  std::vector<double> logits(3, 0.0);
  double lse = -std::numeric_limits<double>::infinity();
  for (int e = 0; e < 3; ++e) {
    for (int j = 0; j < 3; ++j) logits[e] += logits_w.at(e, j) * cv.at(j);
    lse = std::max(lse, logits[e]);
  }
  double acc = 0.0;
  for (int e = 0; e < 3; ++e) acc += std::exp(logits[e] - lse);
  lse += std::log(acc);
  double expect = 0.0;
  for (int e = 0; e < 3; ++e) {
    Var xi = gated_embedding(t, p, experts[e].name, c);
    expect += std::exp(logits[e] - lse) * t.value(cosine(t, xi, psi[e])).item();
  }
  CHECK(t.value(o).item() == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("matching path gradients match finite differences") {
  GrammarConfig cfg = tiny_config();
  CompoundParams params(cfg, {{"video", 3}}, 2, false, 81);
  Array2d clips = random_clips(3, 3, 82);
  std::vector<int> tokens = {1, 3, 0};

  std::vector<std::pair<std::string, Tensor*>> layout;
  ParamStore& store = params.store();
  for (const auto& name : store.names())
    if (name.rfind("match.", 0) == 0) layout.emplace_back(name, &store.get(name));

  auto loss_fn = [&](Tape& t, const std::vector<Var>& vars) {
    std::vector<std::string> names;
    for (const auto& [name, unused] : layout) names.push_back(name);
    TapeParams p(names, vars);
    Var acts = span_token_activations(t, p, tokens);
    Var tau = span_tau(t, acts, 1, 3);
    Var post = t.constant(Tensor::vector({0.3, 0.7}));
    Var c = encode_span_ptc(t, p, cfg.num_nonterminals, tau, post);
    Var v = encode_video_ptc(t, p, "video", clips);
    Var tau2 = span_tau(t, acts, 2, 3);
    Var c_neg = encode_span_ptc(t, p, cfg.num_nonterminals, tau2,
                                t.constant(Tensor::vector({0.5, 0.5})));
    Var v_neg = encode_video_ptc(t, p, "video", sample_clips({clips, 1.0, ""}, 2));
    Var h = triplet_hinge(t, c, v, c_neg, v_neg, 0.2);
    return matching_loss(t, {t.constant(Tensor::scalar(0.8))}, {h});
  };

  GradCheckReport report = grad_check(loss_fn, layout);
  INFO(report.summary());
  CHECK(report.ok);
}

TEST_CASE("mmc path gradients match finite differences") {
  GrammarConfig cfg = tiny_config();
  std::vector<ExpertSpec> experts = {{"audio", 3}, {"scene", 4}};
  CompoundParams params(cfg, experts, 3, true, 91);
  Array2d audio_clips = random_clips(3, 3, 92);
  Array2d scene_clips = random_clips(2, 4, 93);
  std::vector<int> tokens = {2, 4, 1};

  std::vector<std::pair<std::string, Tensor*>> layout;
  ParamStore& store = params.store();
  for (const auto& name : store.names())
    if (name.rfind("match.", 0) == 0) layout.emplace_back(name, &store.get(name));

  auto loss_fn = [&](Tape& t, const std::vector<Var>& vars) {
    std::vector<std::string> names;
    for (const auto& [name, unused] : layout) names.push_back(name);
    TapeParams p(names, vars);
    Var acts = span_token_activations(t, p, tokens);
    Var tau = span_tau(t, acts, 1, 3);
    Var post = t.constant(Tensor::vector({0.4, 0.6}));
    Var c = encode_span_ptc(t, p, cfg.num_nonterminals, tau, post);
    std::vector<Var> psi = {encode_video_expert_mmc(t, p, "audio", audio_clips),
                            encode_video_expert_mmc(t, p, "scene", scene_clips)};
    Var o = mmc_score(t, p, experts, c, psi);
    // Keep the hinge active so relu passes gradient.
    Var h = triplet_hinge_scores(t, o, scale(t, o, 0.5), scale(t, o, 0.25), 0.9);
    return matching_loss(t, {t.constant(Tensor::scalar(1.0))}, {h});
  };

  GradCheckReport report = grad_check(loss_fn, layout);
  INFO(report.summary());
  CHECK(report.ok);
}

TEST_CASE("feature files round-trip through VFEA") {
  ClipFeatures f;
  f.clips = random_clips(5, 7, 101);
  f.seconds_per_clip = 2.5;
  std::string path = "test_features.vfea";
  write_features(path, f);
  ClipFeatures back = read_features(path);
  CHECK(back.clips.rows() == 5);
  CHECK(back.clips.cols() == 7);
  CHECK(back.seconds_per_clip == doctest::Approx(2.5).epsilon(1e-6));
  // Values pass through float32, so compare at float precision.
  CHECK((back.clips - f.clips).abs().maxCoeff() < 1e-6);
  std::remove(path.c_str());

  // Corrupt magic is rejected.
  {
    std::ofstream bad("test_bad.vfea", std::ios::binary);
    bad.write("NOPE", 4);
  }
  CHECK_THROWS_AS(read_features("test_bad.vfea"), std::runtime_error);
  std::remove("test_bad.vfea");
  CHECK_THROWS_AS(read_features("test_missing.vfea"), std::runtime_error);

  CHECK(feature_path("feat", "vid01", "") == "feat/vid01.vfea");
  CHECK(feature_path("feat", "vid01", "audio") == "feat/vid01.audio.vfea");
}
