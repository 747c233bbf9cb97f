#pragma once

#include <string>
#include <vector>

#include "mpcfg/grammar.hpp"
#include "mpcfg/tape.hpp"

namespace mpcfg {

enum class MatchMode { kPtc, kMmc };

struct MatchConfig {
  double margin = 0.2;       // epsilon in the hinge
  double alpha = 1.0;        // loss balance
  int clips_to_sample = 8;   // L
  int frames_per_clip = 16;  // T; metadata only, features are precomputed
  MatchMode mode = MatchMode::kPtc;

  void validate() const;
};

// Precomputed clip embeddings for one video and one expert.
struct ClipFeatures {
  Array2d clips;  // L' x D, one row per clip
  double seconds_per_clip = 1.0;
  std::string source_id;
};

// Equal-interval subsampling: row floor(i*L'/L) for i = 0..L-1 when
// L' >= L; cyclic fill (i mod L') when the video is shorter than L.
Array2d sample_clips(const ClipFeatures& features, int L);

// v = mean_i f^v(h^v_i) for the named expert's linear head.
Var encode_video_ptc(Tape& t, const TapeParams& p, const std::string& expert,
                     const Array2d& sampled);

// Token activations relu(f^c_0(h^c_i)) for a whole sentence ({n, hidden});
// computed once, shared by every span.
Var span_token_activations(Tape& t, const TapeParams& p, const std::vector<int>& tokens);

// tau = max-pool over the span's token activations; i, j are 1-based
// inclusive sentence positions.
Var span_tau(Tape& t, Var activations, int i, int j);

// c = sum_k p(k|c, sigma) f^c_k(tau)
Var encode_span_ptc(Tape& t, const TapeParams& p, int n_nt, Var tau, Var label_post);

// h = [c'.v - c.v + eps]+ + [c.v' - c.v + eps]+
Var triplet_hinge(Tape& t, Var c, Var v, Var c_neg, Var v_neg, double margin);
// Same hinge over precomputed similarity scores (MMC path).
Var triplet_hinge_scores(Tape& t, Var pos, Var neg_span, Var neg_video, double margin);

// s(v, sigma) = sum_s p_span[s] * hinge[s] (spans of length >= 2).
Var matching_loss(Tape& t, const std::vector<Var>& p_span, const std::vector<Var>& hinges);

// MMC: gated embedding of the span vector for one expert — linear,
// sigmoid gate, L2 normalization.
Var gated_embedding(Tape& t, const TapeParams& p, const std::string& expert, Var x);

// MMC video side: temporal mean pool of the expert's clips, then the
// expert's linear projection.
Var encode_video_expert_mmc(Tape& t, const TapeParams& p, const std::string& expert,
                            const Array2d& clips);

// o(Xi, Psi) = sum_i softmax_i(u_i . c) * cos(xi^i, psi^i)
Var mmc_score(Tape& t, const TapeParams& p, const std::vector<ExpertSpec>& experts, Var c,
              const std::vector<Var>& psi);

// Feature files: magic "VFEA", version u32, clip count u32, dim u32,
// seconds-per-clip f32, then f32 little-endian row-major values. MMC
// expert files follow the same format, one per expert, named
// <video_id>.<expert>.vfea.
void write_features(const std::string& path, const ClipFeatures& features);
ClipFeatures read_features(const std::string& path);
std::string feature_path(const std::string& dir, const std::string& video_id,
                         const std::string& expert);

}  // namespace mpcfg
