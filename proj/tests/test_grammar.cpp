#include "mpcfg/grammar.hpp"

#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

using namespace mpcfg;

namespace {

GrammarConfig tiny_config() {
  GrammarConfig cfg;
  cfg.num_nonterminals = 2;
  cfg.num_preterminals = 2;
  cfg.vocab_size = 3;
  cfg.symbol_dim = 2;
  cfg.z_dim = 2;
  cfg.hidden_dim = 2;
  return cfg;
}

// Plain-loop softmax -> log, no shift (tiny values, safe).
std::vector<double> naive_log_softmax(const std::vector<double>& logits) {
  double s = 0.0;
  for (double v : logits) s += std::exp(v);
  std::vector<double> out;
  for (double v : logits) out.push_back(std::log(std::exp(v) / s));
  return out;
}

// Straight-line f_s / f_t: two residual relu layers after a projection.
std::vector<double> naive_mlp(const Tensor& w0, const Tensor& b0, const Tensor& w1,
                              const Tensor& b1, const Tensor& w2, const Tensor& b2,
                              const std::vector<double>& x) {
  auto affine = [](const Tensor& w, const Tensor& b, const std::vector<double>& in) {
    std::vector<double> out(w.rows());
    for (long r = 0; r < w.rows(); ++r) {
      double acc = b.at(r);
      for (long c = 0; c < w.cols(); ++c) acc += w.at(r, c) * in[c];
      out[r] = acc;
    }
    return out;
  };
  auto relu_v = [](std::vector<double> v) {
    for (double& x : v) x = std::max(x, 0.0);
    return v;
  };
  std::vector<double> h0 = relu_v(affine(w0, b0, x));
  std::vector<double> r1 = relu_v(affine(w1, b1, h0));
  std::vector<double> h1(h0.size());
  for (size_t i = 0; i < h0.size(); ++i) h1[i] = h0[i] + r1[i];
  std::vector<double> r2 = relu_v(affine(w2, b2, h1));
  std::vector<double> h2(h1.size());
  for (size_t i = 0; i < h1.size(); ++i) h2[i] = h1[i] + r2[i];
  return h2;
}

void zero_all(ParamStore& store) {
  for (const auto& name : store.names()) store.get(name).array().setZero();
}

double closed_form_kl(const Tensor& mu_q, const Tensor& lv_q, const Tensor& mu_p,
                      const Tensor& lv_p) {
  Tape t;
  PosteriorGaussian q{t.constant(mu_q), t.constant(lv_q)};
  PosteriorGaussian p{t.constant(mu_p), t.constant(lv_p)};
  return t.value(kl_diag_gaussians(t, q, p)).item();
}

}  // namespace

TEST_CASE("rule tables are normalized distributions") {
  GrammarConfig cfg = tiny_config();
  cfg.vocab_size = 5;
  CompoundParams params(cfg, {}, cfg.symbol_dim, false, 7);
  Tape t;
  TapeParams p(t, params.store());
  Tensor z = Tensor::vector({0.3, -0.8});
  RuleTable rules = rule_log_probs(t, p, cfg, t.constant(z), {0, 2, 4, 2});

  CHECK(t.value(rules.start).array().exp().sum() == doctest::Approx(1.0).epsilon(1e-6));
  const Array2d& bin = t.value(rules.binary).array();
  for (long r = 0; r < bin.rows(); ++r)
    CHECK(bin.row(r).exp().sum() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK((t.value(rules.binary).array() <= 0.0).all());
  // Terminal normalization holds over the full vocabulary, so re-derive
  // from a sentence enumerating every token once.
  RuleTable all = rule_log_probs(t, p, cfg, t.constant(z), {0, 1, 2, 3, 4});
  const Array2d& term = t.value(all.terminal).array();
  for (long r = 0; r < term.rows(); ++r)
    CHECK(term.row(r).exp().sum() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("all-zero parameters force uniform rule distributions") {
  GrammarConfig cfg = tiny_config();
  CompoundParams params(cfg, {}, cfg.symbol_dim, false, 3);
  zero_all(params.store());
  Tape t;
  TapeParams p(t, params.store());
  RuleTable rules = rule_log_probs(t, p, cfg, t.constant(Tensor::zeros({cfg.z_dim})), {0, 1});

  double ns2 = static_cast<double>(cfg.n_symbols() * cfg.n_symbols());
  CHECK((t.value(rules.start).array().exp() - 1.0 / cfg.num_nonterminals).abs().maxCoeff() <=
        1e-12);
  CHECK((t.value(rules.binary).array().exp() - 1.0 / ns2).abs().maxCoeff() <= 1e-12);
  CHECK((t.value(rules.terminal).array().exp() - 1.0 / cfg.vocab_size).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("rule_log_probs matches a straight-line reimplementation") {
  GrammarConfig cfg = tiny_config();
  CompoundParams params(cfg, {}, cfg.symbol_dim, false, 42);
  const ParamStore& s = params.store();
  std::vector<int> tokens = {2, 0};

  Tape t;
  TapeParams p(t, s);
  RuleTable rules =
      rule_log_probs(t, p, cfg, t.constant(Tensor::zeros({cfg.z_dim})), tokens);

  int nn = cfg.num_nonterminals, np = cfg.num_preterminals, ns = cfg.n_symbols();
  auto row = [](const Tensor& m, long r) {
    std::vector<double> v(m.cols());
    for (long c = 0; c < m.cols(); ++c) v[c] = m.at(r, c);
    return v;
  };

  // Start rules.
  std::vector<double> wsz = row(s.get("grammar.w_S"), 0);
  wsz.insert(wsz.end(), {0.0, 0.0});  // z = 0
  std::vector<double> fs =
      naive_mlp(s.get("grammar.fs.W0"), s.get("grammar.fs.b0"), s.get("grammar.fs.W1"),
                s.get("grammar.fs.b1"), s.get("grammar.fs.W2"), s.get("grammar.fs.b2"), wsz);
  std::vector<double> start_logits(nn);
  for (int a = 0; a < nn; ++a) {
    double acc = 0.0;
    for (int d = 0; d < cfg.symbol_dim; ++d) acc += s.get("grammar.u_A").at(a, d) * fs[d];
    start_logits[a] = acc;
  }
  std::vector<double> start_ref = naive_log_softmax(start_logits);
  for (int a = 0; a < nn; ++a)
    CHECK(t.value(rules.start).at(a) == doctest::Approx(start_ref[a]).epsilon(1e-9));

  // Binary rules: u_BC . [w_A; z].
  for (int a = 0; a < nn; ++a) {
    std::vector<double> waz = row(s.get("grammar.w_N"), a);
    waz.insert(waz.end(), {0.0, 0.0});
    std::vector<double> logits(ns * ns);
    for (int bc = 0; bc < ns * ns; ++bc) {
      double acc = 0.0;
      for (int d = 0; d < cfg.symbol_dim + cfg.z_dim; ++d)
        acc += s.get("grammar.u_BC").at(bc, d) * waz[d];
      logits[bc] = acc;
    }
    std::vector<double> ref = naive_log_softmax(logits);
    for (int bc = 0; bc < ns * ns; ++bc)
      CHECK(t.value(rules.binary).at(a, bc) == doctest::Approx(ref[bc]).epsilon(1e-9));
  }

  // Terminal rules restricted to the sentence tokens.
  for (int pt = 0; pt < np; ++pt) {
    std::vector<double> wtz = row(s.get("grammar.w_P"), pt);
    wtz.insert(wtz.end(), {0.0, 0.0});
    std::vector<double> ft =
        naive_mlp(s.get("grammar.ft.W0"), s.get("grammar.ft.b0"), s.get("grammar.ft.W1"),
                  s.get("grammar.ft.b1"), s.get("grammar.ft.W2"), s.get("grammar.ft.b2"), wtz);
    std::vector<double> logits(cfg.vocab_size);
    for (int w = 0; w < cfg.vocab_size; ++w) {
      double acc = 0.0;
      for (int d = 0; d < cfg.symbol_dim; ++d) acc += s.get("grammar.u_w").at(w, d) * ft[d];
      logits[w] = acc;
    }
    std::vector<double> ref = naive_log_softmax(logits);
    for (size_t i = 0; i < tokens.size(); ++i)
      CHECK(t.value(rules.terminal).at(pt, static_cast<long>(i)) ==
            doctest::Approx(ref[tokens[i]]).epsilon(1e-9));
  }
}

TEST_CASE("terminal table is a column gather of a content-independent table") {
  GrammarConfig cfg = tiny_config();
  cfg.vocab_size = 6;
  CompoundParams params(cfg, {}, cfg.symbol_dim, false, 9);
  Tensor z = Tensor::vector({0.1, 0.2});
  Tape t;
  TapeParams p(t, params.store());
  RuleTable r1 = rule_log_probs(t, p, cfg, t.constant(z), {3, 1, 3});
  RuleTable r2 = rule_log_probs(t, p, cfg, t.constant(z), {0, 3});
  // Token 3 appears in both sentences; its column must be identical.
  for (int pt = 0; pt < cfg.num_preterminals; ++pt) {
    CHECK(t.value(r1.terminal).at(pt, 0) == doctest::Approx(t.value(r2.terminal).at(pt, 1)));
    CHECK(t.value(r1.terminal).at(pt, 0) == doctest::Approx(t.value(r1.terminal).at(pt, 2)));
  }
  CHECK_THROWS_AS(rule_log_probs(t, p, cfg, t.constant(z), {0, 6}), std::out_of_range);
}

TEST_CASE("shifting every u_BC row by a constant leaves binary rules unchanged") {
  GrammarConfig cfg = tiny_config();
  CompoundParams params(cfg, {}, cfg.symbol_dim, false, 11);
  Tensor z = Tensor::vector({0.4, -0.2});

  Tape t1;
  TapeParams p1(t1, params.store());
  RuleTable before = rule_log_probs(t1, p1, cfg, t1.constant(z), {0, 1});
  Tensor snapshot = t1.value(before.binary);

  // Shift: u_BC row += same constant vector for all rows. The softmax over
  // BC sees logits shifted by a constant (per A), so probabilities hold.
  Tensor& ubc = params.store().get("grammar.u_BC");
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  Eigen::ArrayXd shift(ubc.cols());
  for (long c = 0; c < ubc.cols(); ++c) shift(c) = dist(rng);
  for (long r = 0; r < ubc.rows(); ++r) ubc.array().row(r) += shift.transpose();

  Tape t2;
  TapeParams p2(t2, params.store());
  RuleTable after = rule_log_probs(t2, p2, cfg, t2.constant(z), {0, 1});
  double max_diff = (t2.value(after.binary).array() - snapshot.array()).abs().maxCoeff();
  CHECK(max_diff <= 1e-6);
}

TEST_CASE("zero posterior encoder yields a standard-normal posterior") {
  GrammarConfig cfg = tiny_config();
  CompoundParams params(cfg, {}, cfg.symbol_dim, false, 13);
  zero_all(params.store());
  Tape t;
  TapeParams p(t, params.store());
  PosteriorGaussian q = encode_posterior(t, p, cfg, {0, 1, 2});
  CHECK((t.value(q.mu).array() == 0.0).all());
  CHECK((t.value(q.logvar).array() == 0.0).all());
}

TEST_CASE("encode_posterior is deterministic") {
  GrammarConfig cfg = tiny_config();
  CompoundParams params(cfg, {}, cfg.symbol_dim, false, 17);
  Tape t;
  TapeParams p(t, params.store());
  PosteriorGaussian a = encode_posterior(t, p, cfg, {1, 0, 2});
  PosteriorGaussian b = encode_posterior(t, p, cfg, {1, 0, 2});
  CHECK((t.value(a.mu).array() == t.value(b.mu).array()).all());
  CHECK((t.value(a.logvar).array() == t.value(b.logvar).array()).all());
  CHECK_THROWS_AS(encode_posterior(t, p, cfg, {}), std::invalid_argument);
}

TEST_CASE("encode_posterior matches a straight-line reimplementation") {
  GrammarConfig cfg = tiny_config();
  CompoundParams params(cfg, {}, cfg.symbol_dim, false, 23);
  const ParamStore& s = params.store();
  std::vector<int> tokens = {2, 0};

  Tape t;
  TapeParams p(t, s);
  PosteriorGaussian q = encode_posterior(t, p, cfg, tokens);

  int sd = cfg.symbol_dim, hd = cfg.hidden_dim, zd = cfg.z_dim, n = 2;
  auto embed_row = [&](int tok) {
    std::vector<double> v(sd);
    for (int d = 0; d < sd; ++d) v[d] = s.get("posterior.embed").at(tok, d);
    return v;
  };
  auto rnn = [&](const std::string& base, bool reverse) {
    std::vector<std::vector<double>> states(n);
    std::vector<double> h(hd, 0.0);
    const Tensor& wx = s.get(base + ".Wx");
    const Tensor& wh = s.get(base + ".Wh");
    const Tensor& b = s.get(base + ".b");
    for (int step = 0; step < n; ++step) {
      int i = reverse ? n - 1 - step : step;
      std::vector<double> x = embed_row(tokens[i]);
      std::vector<double> nh(hd);
      for (int r = 0; r < hd; ++r) {
        double acc = b.at(r);
        for (int c = 0; c < sd; ++c) acc += wx.at(r, c) * x[c];
        for (int c = 0; c < hd; ++c) acc += wh.at(r, c) * h[c];
        nh[r] = std::tanh(acc);
      }
      h = nh;
      states[i] = h;
    }
    return states;
  };
  auto hf = rnn("posterior.fwd", false);
  auto hb = rnn("posterior.bwd", true);
  std::vector<double> pooled(2 * hd, -1e300);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < hd; ++d) {
      pooled[d] = std::max(pooled[d], hf[i][d]);
      pooled[hd + d] = std::max(pooled[hd + d], hb[i][d]);
    }
  for (int r = 0; r < zd; ++r) {
    double mu = s.get("posterior.mu.b").at(r);
    double lv = s.get("posterior.logvar.b").at(r);
    for (int c = 0; c < 2 * hd; ++c) {
      mu += s.get("posterior.mu.W").at(r, c) * pooled[c];
      lv += s.get("posterior.logvar.W").at(r, c) * pooled[c];
    }
    CHECK(t.value(q.mu).at(r) == doctest::Approx(mu).epsilon(1e-9));
    CHECK(t.value(q.logvar).at(r) == doctest::Approx(lv).epsilon(1e-9));
  }
}

TEST_CASE("sample_z reparameterization") {
  Tape t;
  PosteriorGaussian q{t.constant(Tensor::vector({1.0, 2.0})),
                      t.constant(Tensor::vector({0.0, std::log(4.0)}))};
  SUBCASE("zero noise returns the mean") {
    Var z = sample_z(t, q, Tensor::vector({0.0, 0.0}));
    CHECK(t.value(z).at(0) == doctest::Approx(1.0));
    CHECK(t.value(z).at(1) == doctest::Approx(2.0));
  }
  SUBCASE("unit variance adds the noise directly") {
    PosteriorGaussian unit{t.constant(Tensor::vector({1.0, 2.0})),
                           t.constant(Tensor::vector({0.0, 0.0}))};
    Var z = sample_z(t, unit, Tensor::vector({0.5, -0.5}));
    CHECK(t.value(z).at(0) == doctest::Approx(1.5));
    CHECK(t.value(z).at(1) == doctest::Approx(1.5));
  }
  SUBCASE("hand example: mu=(1,2), logvar=(0, ln 4), noise=(1,1) -> (2,4)") {
    Var z = sample_z(t, q, Tensor::vector({1.0, 1.0}));
    CHECK(t.value(z).at(0) == doctest::Approx(2.0));
    CHECK(t.value(z).at(1) == doctest::Approx(4.0));
  }
}

TEST_CASE("KL of identical Gaussians is exactly zero") {
  Tensor mu = Tensor::vector({0.3, -1.2, 0.0});
  Tensor lv = Tensor::vector({0.1, -0.4, 0.7});
  CHECK(closed_form_kl(mu, lv, mu, lv) == 0.0);
  CHECK(closed_form_kl(Tensor::zeros({4}), Tensor::zeros({4}), Tensor::zeros({4}),
                       Tensor::zeros({4})) == 0.0);
}

TEST_CASE("KL of N(1,1) against N(0,1) in one dimension is 0.5") {
  CHECK(closed_form_kl(Tensor::vector({1.0}), Tensor::vector({0.0}), Tensor::vector({0.0}),
                       Tensor::vector({0.0})) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("KL is nonnegative and rejects dimension mismatch") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor mq = Tensor::zeros({3}), lq = Tensor::zeros({3});
    Tensor mp = Tensor::zeros({3}), lp = Tensor::zeros({3});
    for (int i = 0; i < 3; ++i) {
      mq.at(i) = dist(rng);
      lq.at(i) = dist(rng);
      mp.at(i) = dist(rng);
      lp.at(i) = dist(rng);
    }
    CHECK(closed_form_kl(mq, lq, mp, lp) >= 0.0);
  }
  Tape t;
  PosteriorGaussian q{t.constant(Tensor::zeros({2})), t.constant(Tensor::zeros({2}))};
  PosteriorGaussian p{t.constant(Tensor::zeros({3})), t.constant(Tensor::zeros({3}))};
  CHECK_THROWS_AS(kl_diag_gaussians(t, q, p), ShapeError);
}

TEST_CASE("closed-form KL agrees with a Monte-Carlo estimate") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> dist(-0.8, 0.8);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int dim = 3, samples = 100000;
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<double> mq(dim), lq(dim), mp(dim), lp(dim);
    for (int i = 0; i < dim; ++i) {
      mq[i] = dist(rng);
      lq[i] = dist(rng);
      mp[i] = dist(rng);
      lp[i] = dist(rng);
    }
    // E_q[log q(z) - log p(z)] by sampling z from q.
    double sum = 0.0, sum_sq = 0.0;
    for (int s = 0; s < samples; ++s) {
      double term = 0.0;
      for (int i = 0; i < dim; ++i) {
        double z = mq[i] + std::exp(0.5 * lq[i]) * normal(rng);
        double log_q = -0.5 * (std::log(2 * M_PI) + lq[i]) -
                       0.5 * (z - mq[i]) * (z - mq[i]) / std::exp(lq[i]);
        double log_p = -0.5 * (std::log(2 * M_PI) + lp[i]) -
                       0.5 * (z - mp[i]) * (z - mp[i]) / std::exp(lp[i]);
        term += log_q - log_p;
      }
      sum += term;
      sum_sq += term * term;
    }
    double mc = sum / samples;
    double var = (sum_sq / samples - mc * mc) / samples;
    double se = std::sqrt(var);
    Tensor tmq = Tensor::zeros({dim}), tlq = Tensor::zeros({dim});
    Tensor tmp_ = Tensor::zeros({dim}), tlp = Tensor::zeros({dim});
    for (int i = 0; i < dim; ++i) {
      tmq.at(i) = mq[i];
      tlq.at(i) = lq[i];
      tmp_.at(i) = mp[i];
      tlp.at(i) = lp[i];
    }
    double closed = closed_form_kl(tmq, tlq, tmp_, tlp);
    CHECK(std::abs(closed - mc) <= 3.0 * se);
  }
}
