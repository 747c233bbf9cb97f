#include "mpcfg/matching.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mpcfg {

void MatchConfig::validate() const {
  if (margin <= 0.0) throw std::invalid_argument("match config: margin must be positive");
  if (alpha < 0.0) throw std::invalid_argument("match config: alpha must be non-negative");
  if (clips_to_sample <= 0 || frames_per_clip <= 0)
    throw std::invalid_argument("match config: clip counts must be positive");
}

Array2d sample_clips(const ClipFeatures& features, int L) {
  const Array2d& clips = features.clips;
  int have = static_cast<int>(clips.rows());
  if (have <= 0 || clips.cols() <= 0)
    throw std::invalid_argument("sample_clips: empty feature matrix");
  if (L <= 0) throw std::invalid_argument("sample_clips: L must be positive");
  Array2d out(L, clips.cols());
  for (int i = 0; i < L; ++i) {
    int row = have >= L ? static_cast<int>(static_cast<long long>(i) * have / L) : i % have;
    out.row(i) = clips.row(row);
  }
  return out;
}

Var encode_video_ptc(Tape& t, const TapeParams& p, const std::string& expert,
                     const Array2d& sampled) {
  Var x = t.constant(Tensor::matrix(sampled));
  Var w = p["match.video." + expert + ".W"];
  Var b = p["match.video." + expert + ".b"];
  Var rows = add(t, matmul(t, x, transpose(t, w)), b);  // {L, joint}
  return mean(t, rows, 0);
}

Var span_token_activations(Tape& t, const TapeParams& p, const std::vector<int>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("span_token_activations: empty sentence");
  Var h = embedding_lookup(t, p["match.embed"], tokens);
  Var pre = add(t, matmul(t, h, transpose(t, p["match.fc0.W"])), p["match.fc0.b"]);
  return relu(t, pre);  // {n, hidden}
}

Var span_tau(Tape& t, Var activations, int i, int j) {
  int n = t.value(activations).shape()[0];
  if (i < 1 || j > n || i > j) throw std::invalid_argument("span_tau: span out of range");
  return max_pool(t, slice_rows(t, activations, i - 1, j), 0);
}

Var encode_span_ptc(Tape& t, const TapeParams& p, int n_nt, Var tau, Var label_post) {
  std::vector<Var> rows;
  rows.reserve(n_nt);
  for (int k = 0; k < n_nt; ++k) {
    Var y = add(t, matmul(t, p[CompoundParams::span_head_w(k)], tau),
                p[CompoundParams::span_head_b(k)]);
    rows.push_back(reshape(t, y, {1, static_cast<int>(t.value(y).numel())}));
  }
  Var heads = concat(t, rows, 0);          // {|N|, joint}
  return matmul(t, label_post, heads);     // {joint}
}

Var triplet_hinge_scores(Tape& t, Var pos, Var neg_span, Var neg_video, double margin) {
  Var a = hinge(t, add_const(t, sub(t, neg_span, pos), margin));
  Var b = hinge(t, add_const(t, sub(t, neg_video, pos), margin));
  return add(t, a, b);
}

Var triplet_hinge(Tape& t, Var c, Var v, Var c_neg, Var v_neg, double margin) {
  return triplet_hinge_scores(t, dot(t, c, v), dot(t, c_neg, v), dot(t, c, v_neg), margin);
}

Var matching_loss(Tape& t, const std::vector<Var>& p_span, const std::vector<Var>& hinges) {
  if (p_span.size() != hinges.size())
    throw std::invalid_argument("matching_loss: span/hinge count mismatch");
  if (p_span.empty()) return t.constant(Tensor::scalar(0.0));
  Var total = mul(t, p_span[0], hinges[0]);
  for (size_t s = 1; s < p_span.size(); ++s)
    total = add(t, total, mul(t, p_span[s], hinges[s]));
  return total;
}

Var gated_embedding(Tape& t, const TapeParams& p, const std::string& expert, Var x) {
  std::string base = "match.gate." + expert;
  Var z1 = add(t, matmul(t, p[base + ".W1"], x), p[base + ".b1"]);
  Var gate = sigmoid(t, add(t, matmul(t, p[base + ".W2"], z1), p[base + ".b2"]));
  return l2_normalize(t, mul(t, z1, gate));
}

Var encode_video_expert_mmc(Tape& t, const TapeParams& p, const std::string& expert,
                            const Array2d& clips) {
  if (clips.rows() <= 0 || clips.cols() <= 0)
    throw std::invalid_argument("encode_video_expert_mmc: empty feature matrix");
  Var pooled = mean(t, t.constant(Tensor::matrix(clips)), 0);
  Var w = p["match.video." + expert + ".W"];
  Var b = p["match.video." + expert + ".b"];
  return add(t, matmul(t, w, pooled), b);
}

Var mmc_score(Tape& t, const TapeParams& p, const std::vector<ExpertSpec>& experts, Var c,
              const std::vector<Var>& psi) {
  if (experts.empty()) throw std::invalid_argument("mmc_score: no experts");
  if (experts.size() != psi.size())
    throw std::invalid_argument("mmc_score: expert/embedding count mismatch");
  Var weights = exp(t, log_softmax(t, matmul(t, p["match.expert_logits"], c)));
  std::vector<Var> sims;
  sims.reserve(experts.size());
  for (size_t i = 0; i < experts.size(); ++i) {
    Var xi = gated_embedding(t, p, experts[i].name, c);
    sims.push_back(reshape(t, cosine(t, xi, psi[i]), {1}));
  }
  return dot(t, weights, concat(t, sims, 1));
}

namespace {

constexpr std::uint32_t kFeatureVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(sizeof(T) == 4);
  std::uint32_t bits;
  std::memcpy(&bits, &value, 4);
  if constexpr (std::endian::native == std::endian::big)
    bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) |
           ((bits >> 24) & 0xffu);
  out.write(reinterpret_cast<const char*>(&bits), 4);
}

template <typename T>
T read_le(std::istream& in, const std::string& path) {
  static_assert(sizeof(T) == 4);
  std::uint32_t bits = 0;
  if (!in.read(reinterpret_cast<char*>(&bits), 4))
    throw std::runtime_error("feature file truncated: " + path);
  if constexpr (std::endian::native == std::endian::big)
    bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) |
           ((bits >> 24) & 0xffu);
  T value;
  std::memcpy(&value, &bits, 4);
  return value;
}

}  // namespace

void write_features(const std::string& path, const ClipFeatures& features) {
  if (features.clips.rows() <= 0 || features.clips.cols() <= 0)
    throw std::invalid_argument("write_features: empty feature matrix");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open feature file for writing: " + path);
  out.write("VFEA", 4);
  write_le<std::uint32_t>(out, kFeatureVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(features.clips.rows()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(features.clips.cols()));
  write_le<float>(out, static_cast<float>(features.seconds_per_clip));
  for (int i = 0; i < features.clips.rows(); ++i)
    for (int j = 0; j < features.clips.cols(); ++j)
      write_le<float>(out, static_cast<float>(features.clips(i, j)));
  if (!out) throw std::runtime_error("failed writing feature file: " + path);
}

ClipFeatures read_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature file: " + path);
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, "VFEA", 4) != 0)
    throw std::runtime_error("bad feature file magic: " + path);
  auto version = read_le<std::uint32_t>(in, path);
  if (version != kFeatureVersion)
    throw std::runtime_error("unsupported feature file version: " + path);
  auto rows = read_le<std::uint32_t>(in, path);
  auto cols = read_le<std::uint32_t>(in, path);
  if (rows == 0 || cols == 0) throw std::runtime_error("empty feature file: " + path);
  ClipFeatures features;
  features.seconds_per_clip = read_le<float>(in, path);
  features.clips.resize(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) features.clips(i, j) = read_le<float>(in, path);
  features.source_id = path;
  return features;
}

std::string feature_path(const std::string& dir, const std::string& video_id,
                         const std::string& expert) {
  std::string name = expert.empty() ? video_id : video_id + "." + expert;
  return dir + "/" + name + ".vfea";
}

}  // namespace mpcfg
