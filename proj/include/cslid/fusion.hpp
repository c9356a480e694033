#pragma once

#include <vector>

#include "cslid/common.hpp"
#include "cslid/corpus.hpp"

namespace cslid {

/// Token type map l: token index -> LID class (blank -> Silence).
struct TokenTypeMap {
  std::vector<int> cls;

  static TokenTypeMap from_vocab(const Vocabulary& vocab);
  int size() const { return static_cast<int>(cls.size()); }
  int operator[](int token) const { return cls[token]; }
};

/// Fused logits z[t,y] + u[t, l(y)].
Matrix fused_logits(const Matrix& z, const Matrix& u, const TokenTypeMap& l);

/// Row-wise log-softmax of the fused logits: the per-frame token distribution
/// after adding each token's language logit.
Matrix fuse_logits(const Matrix& z, const Matrix& u, const TokenTypeMap& l);

struct FusionGrad {
  Matrix z;  // T x |V|, equal to the incoming gradient
  Matrix u;  // T x 3, incoming gradient summed per token class
};

/// Maps a gradient w.r.t. the fused logits back onto z and u.
FusionGrad fuse_logits_backward(const Matrix& grad_fused, const TokenTypeMap& l);

struct FusionLossConfig {
  double lambda = 0.1;
};

struct JointLoss {
  double loss = 0.0;
  double ctc = 0.0;  // CTC term on the fused distribution
  double ce = 0.0;   // LID cross-entropy term
  bool feasible = true;
  Matrix grad_z;
  Matrix grad_u;
};

/// (1 - lambda) * CTC(fused, target) + lambda * CE(u, labels). The CTC term is
/// skipped entirely when lambda == 1. An infeasible target yields an infinite
/// loss, feasible = false and zero gradients.
JointLoss joint_loss(const Matrix& z, const Matrix& u, const std::vector<int>& target, const LidLabelSeq& labels,
                     const FusionLossConfig& cfg, const TokenTypeMap& l);

struct MultiplyFused {
  Matrix probs;            // T x |V|, rows sum to one
  int fallback_frames = 0;  // rows that lost all mass and kept the unfused probabilities
};

/// Decode-time rescoring for separately trained modules:
/// ctc_probs[t,y] * lid_probs[t, l(y)], renormalized per frame.
MultiplyFused multiply_fuse(const Matrix& ctc_probs, const Matrix& lid_probs, const TokenTypeMap& l);

}  // namespace cslid
