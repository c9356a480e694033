#pragma once

#include <vector>

#include "cslid/common.hpp"

namespace cslid {

struct CtcResult {
  /// -log p(target | input) in nats; +inf when no alignment fits.
  double loss = 0.0;
  bool feasible = true;
  /// Gradient w.r.t. the pre-softmax logits: softmax - occupancy (T x |V|).
  Matrix grad_logits;
  /// Posterior occupancy of each extended label (T x (2U+1)); blank at even
  /// positions, target[s/2] at odd ones.
  Matrix occupancy;
};

/// Minimum number of frames an alignment needs: U plus one separating blank
/// per adjacent repeated label.
int ctc_min_frames(const std::vector<int>& target);

/// Loss via log-space forward-backward over the blank-augmented target.
/// `log_probs` rows must be log-softmax normalized. Infeasible targets give an
/// infinite loss, feasible = false and a zero gradient.
CtcResult ctc_loss(const Matrix& log_probs, const std::vector<int>& target, int blank = 0);

/// Per-frame, per-extended-label posterior. Rows sum to one. Empty when the
/// target is infeasible.
Matrix ctc_occupancy(const Matrix& log_probs, const std::vector<int>& target, int blank = 0);

/// Frame-wise argmax (ties to the lowest index), repeats collapsed, blanks
/// removed.
std::vector<int> greedy_decode(const Matrix& log_probs, int blank = 0);

/// Losses for a batch of utterances, computed in parallel over utterances.
std::vector<CtcResult> ctc_loss_batch(const std::vector<Matrix>& log_probs,
                                      const std::vector<std::vector<int>>& targets, int workers, int blank = 0);
/// Serial reference for ctc_loss_batch.
std::vector<CtcResult> ctc_loss_batch_serial(const std::vector<Matrix>& log_probs,
                                             const std::vector<std::vector<int>>& targets, int blank = 0);

}  // namespace cslid
