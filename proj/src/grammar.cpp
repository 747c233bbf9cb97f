#include "mpcfg/grammar.hpp"

#include <cmath>
#include <stdexcept>

namespace mpcfg {

void GrammarConfig::validate() const {
  if (num_nonterminals <= 0 || num_preterminals <= 0 || vocab_size <= 0 || symbol_dim <= 0 ||
      z_dim <= 0 || hidden_dim <= 0)
    throw std::invalid_argument("grammar config: all dimensions must be positive");
}

TapeParams::TapeParams(Tape& t, const ParamStore& store) {
  for (const auto& name : store.names()) vars_.emplace(name, t.leaf(store.get(name)));
}

TapeParams::TapeParams(const std::vector<std::string>& names, const std::vector<Var>& vars) {
  if (names.size() != vars.size())
    throw std::invalid_argument("TapeParams: name/var count mismatch");
  for (size_t i = 0; i < names.size(); ++i) vars_.emplace(names[i], vars[i]);
}

Var TapeParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::runtime_error("unknown parameter: " + name);
  return it->second;
}

CompoundParams::CompoundParams(const GrammarConfig& cfg, std::vector<ExpertSpec> experts,
                               int joint_dim, bool mmc, unsigned long seed)
    : cfg_(cfg), experts_(std::move(experts)), joint_dim_(joint_dim), mmc_(mmc) {
  cfg_.validate();
  if (joint_dim_ <= 0) throw std::invalid_argument("joint_dim must be positive");
  std::mt19937_64 rng(seed);
  int sd = cfg_.symbol_dim, zd = cfg_.z_dim, hd = cfg_.hidden_dim;
  int nn = cfg_.num_nonterminals, np = cfg_.num_preterminals, nv = cfg_.vocab_size;
  int ns = nn + np;

  // Grammar side: symbol embeddings and rule output vectors.
  store_.add("grammar.w_S", uniform_vector(rng, sd));
  store_.add("grammar.w_N", xavier_uniform(rng, nn, sd));
  store_.add("grammar.w_P", xavier_uniform(rng, np, sd));
  store_.add("grammar.u_A", xavier_uniform(rng, nn, sd));
  store_.add("grammar.u_BC", xavier_uniform(rng, ns * ns, sd + zd));
  store_.add("grammar.u_w", xavier_uniform(rng, nv, sd));
  for (const char* mlp : {"fs", "ft"}) {
    std::string base = std::string("grammar.") + mlp;
    store_.add(base + ".W0", xavier_uniform(rng, sd, sd + zd));
    store_.add(base + ".b0", Tensor::zeros({sd}));
    store_.add(base + ".W1", xavier_uniform(rng, sd, sd));
    store_.add(base + ".b1", Tensor::zeros({sd}));
    store_.add(base + ".W2", xavier_uniform(rng, sd, sd));
    store_.add(base + ".b2", Tensor::zeros({sd}));
  }

  // Posterior encoder phi.
  store_.add("posterior.embed", xavier_uniform(rng, nv, sd));
  for (const char* dir : {"fwd", "bwd"}) {
    std::string base = std::string("posterior.") + dir;
    store_.add(base + ".Wx", xavier_uniform(rng, hd, sd));
    store_.add(base + ".Wh", xavier_uniform(rng, hd, hd));
    store_.add(base + ".b", Tensor::zeros({hd}));
  }
  store_.add("posterior.mu.W", xavier_uniform(rng, zd, 2 * hd));
  store_.add("posterior.mu.b", Tensor::zeros({zd}));
  store_.add("posterior.logvar.W", xavier_uniform(rng, zd, 2 * hd));
  store_.add("posterior.logvar.b", Tensor::zeros({zd}));

  if (experts_.empty()) return;

  // Matching side: word table h^c, span head f^c_0 and the |N|
  // label-specific heads f^c_k (duplicated from one draw).
  store_.add("match.embed", xavier_uniform(rng, nv, sd));
  store_.add("match.fc0.W", xavier_uniform(rng, hd, sd));
  store_.add("match.fc0.b", Tensor::zeros({hd}));
  Tensor head_w = xavier_uniform(rng, joint_dim_, hd);
  for (int k = 0; k < nn; ++k) {
    store_.add(span_head_w(k), head_w);
    store_.add(span_head_b(k), Tensor::zeros({joint_dim_}));
  }
  for (const auto& e : experts_) {
    if (e.dim <= 0) throw std::invalid_argument("expert dimension must be positive: " + e.name);
    store_.add("match.video." + e.name + ".W", xavier_uniform(rng, joint_dim_, e.dim));
    store_.add("match.video." + e.name + ".b", Tensor::zeros({joint_dim_}));
  }
  if (mmc_) {
    for (const auto& e : experts_) {
      std::string base = "match.gate." + e.name;
      store_.add(base + ".W1", xavier_uniform(rng, joint_dim_, joint_dim_));
      store_.add(base + ".b1", Tensor::zeros({joint_dim_}));
      store_.add(base + ".W2", xavier_uniform(rng, joint_dim_, joint_dim_));
      store_.add(base + ".b2", Tensor::zeros({joint_dim_}));
    }
    store_.add("match.expert_logits",
               xavier_uniform(rng, static_cast<int>(experts_.size()), joint_dim_));
  }
}

Var residual_mlp(Tape& t, Var x, Var w0, Var b0, Var w1, Var b1, Var w2, Var b2) {
  Var h0 = relu(t, add(t, matmul(t, x, transpose(t, w0)), b0));
  Var h1 = add(t, h0, relu(t, add(t, matmul(t, h0, transpose(t, w1)), b1)));
  Var h2 = add(t, h1, relu(t, add(t, matmul(t, h1, transpose(t, w2)), b2)));
  return h2;
}

namespace {

// Stacks z as identical rows: {rows, z_dim}.
Var broadcast_rows_of(Tape& t, Var z, int rows) {
  return outer_add(t, t.constant(Tensor::zeros({rows})), z);
}

void check_tokens(const std::vector<int>& tokens, int vocab_size) {
  for (int id : tokens)
    if (id < 0 || id >= vocab_size) throw std::out_of_range("token id out of vocabulary range");
}

}  // namespace

RuleTable rule_log_probs(Tape& t, const TapeParams& p, const GrammarConfig& cfg, Var z,
                         const std::vector<int>& tokens) {
  cfg.validate();
  check_tokens(tokens, cfg.vocab_size);
  int nn = cfg.num_nonterminals, np = cfg.num_preterminals;

  // pi_{S->A} = softmax_A u_A . f_s([w_S; z])
  Var wsz = concat(t, {p["grammar.w_S"], z}, 1);
  Var fs = residual_mlp(t, wsz, p["grammar.fs.W0"], p["grammar.fs.b0"], p["grammar.fs.W1"],
                        p["grammar.fs.b1"], p["grammar.fs.W2"], p["grammar.fs.b2"]);
  Var start = log_softmax(t, matmul(t, p["grammar.u_A"], fs));

  // pi_{A->BC} = softmax_{BC} u_{BC} . [w_A; z]
  Var wnz = concat(t, {p["grammar.w_N"], broadcast_rows_of(t, z, nn)}, 1);
  Var binary = log_softmax(t, matmul(t, wnz, transpose(t, p["grammar.u_BC"])));

  // pi_{T->w} = softmax_w u_w . f_t([w_T; z]), then gather token columns.
  Var wpz = concat(t, {p["grammar.w_P"], broadcast_rows_of(t, z, np)}, 1);
  Var ft = residual_mlp(t, wpz, p["grammar.ft.W0"], p["grammar.ft.b0"], p["grammar.ft.W1"],
                        p["grammar.ft.b1"], p["grammar.ft.W2"], p["grammar.ft.b2"]);
  Var term_full = log_softmax(t, matmul(t, ft, transpose(t, p["grammar.u_w"])));
  Var terminal = index_select(t, term_full, 1, tokens);

  return RuleTable{start, binary, terminal, nn, np};
}

PosteriorGaussian encode_posterior(Tape& t, const TapeParams& p, const GrammarConfig& cfg,
                                   const std::vector<int>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("encode_posterior: empty sentence");
  check_tokens(tokens, cfg.vocab_size);
  int n = static_cast<int>(tokens.size());
  int sd = cfg.symbol_dim, hd = cfg.hidden_dim;

  Var x = embedding_lookup(t, p["posterior.embed"], tokens);

  auto run_dir = [&](const char* dir, bool reverse) {
    std::string base = std::string("posterior.") + dir;
    Var wx = p[base + ".Wx"], wh = p[base + ".Wh"], b = p[base + ".b"];
    std::vector<Var> states(n);
    Var h = t.constant(Tensor::zeros({hd}));
    for (int step = 0; step < n; ++step) {
      int i = reverse ? n - 1 - step : step;
      Var xi = reshape(t, slice_rows(t, x, i, i + 1), {sd});
      h = tanh(t, add(t, add(t, matmul(t, wx, xi), matmul(t, wh, h)), b));
      states[i] = h;
    }
    return concat(t, states, 0);  // {n, hd}, aligned with positions
  };
  Var hf = run_dir("fwd", false);
  Var hb = run_dir("bwd", true);
  Var pooled = max_pool(t, concat(t, {hf, hb}, 1), 0);  // {2 hd}

  PosteriorGaussian q;
  q.mu = add(t, matmul(t, p["posterior.mu.W"], pooled), p["posterior.mu.b"]);
  q.logvar = add(t, matmul(t, p["posterior.logvar.W"], pooled), p["posterior.logvar.b"]);
  return q;
}

PosteriorGaussian standard_prior(Tape& t, int z_dim) {
  PosteriorGaussian p;
  p.mu = t.constant(Tensor::zeros({z_dim}));
  p.logvar = t.constant(Tensor::zeros({z_dim}));
  return p;
}

Var sample_z(Tape& t, const PosteriorGaussian& q, const Tensor& noise) {
  if (noise.shape() != t.value(q.mu).shape())
    throw ShapeError("sample_z: noise dimension mismatch");
  Var sigma = exp(t, scale(t, q.logvar, 0.5));
  return add(t, q.mu, mul(t, sigma, t.constant(noise)));
}

Var kl_diag_gaussians(Tape& t, const PosteriorGaussian& q, const PosteriorGaussian& p) {
  const Tensor& mq = t.value(q.mu);
  if (mq.shape() != t.value(p.mu).shape() ||
      t.value(q.logvar).shape() != t.value(p.logvar).shape() ||
      mq.shape() != t.value(q.logvar).shape())
    throw ShapeError("kl_diag_gaussians: dimension mismatch");
  long d = mq.numel();
  // KL = 0.5 sum( var_q/var_p + (mu_q-mu_p)^2/var_p - 1 + logvar_p - logvar_q )
  Var var_q = exp(t, q.logvar);
  Var var_p = exp(t, p.logvar);
  Var diff = sub(t, q.mu, p.mu);
  Var term = add(t, add(t, div(t, var_q, var_p), div(t, mul(t, diff, diff), var_p)),
                 sub(t, p.logvar, q.logvar));
  return scale(t, add_const(t, sum_all(t, term), -static_cast<double>(d)), 0.5);
}

}  // namespace mpcfg
