#pragma once

#include <string>
#include <vector>

#include "cslid/common.hpp"
#include "cslid/corpus.hpp"

namespace cslid {

/// Per-layer, per-dimension standardization statistics. Fitted on the
/// training split only and frozen afterwards.
struct LayerNormStats {
  static constexpr double kStdFloor = 1e-6;

  std::vector<RowVector> mean;  // one 1 x D row per layer
  std::vector<RowVector> std;   // floored at kStdFloor
  std::string source_split = "train";

  int layer_count() const { return static_cast<int>(mean.size()); }
};

/// Population mean/std over every frame of every utterance given.
LayerNormStats fit_norm_stats(const std::vector<const Utterance*>& train_utterances);

Matrix normalize_layer(const Matrix& layer, const LayerNormStats& stats, int layer_index);
std::vector<Matrix> normalize_layers(const std::vector<Matrix>& layers, const LayerNormStats& stats);

/// Unconstrained trainable scalars; the mixing weights are softmax(raw).
struct LayerWeights {
  Vector raw;

  static LayerWeights uniform(int layers) { return {Vector::Zero(layers)}; }
  Vector simplex() const;
};

Vector softmax(const Eigen::Ref<const Vector>& raw);

/// sum_i softmax(raw)_i * normalized_i. The inputs are already standardized.
Matrix combine_layers(const std::vector<Matrix>& normalized, const Eigen::Ref<const Vector>& raw);

/// Gradient of a downstream scalar w.r.t. raw, given its gradient w.r.t. the
/// combined output: w_j * (s_j - sum_i w_i s_i) with s_i = <grad_out, normalized_i>.
Vector combine_layers_backward(const std::vector<Matrix>& normalized, const Eigen::Ref<const Vector>& raw,
                               const Matrix& grad_out);

struct WeightedSumGrad {
  Vector raw;
  std::vector<Matrix> layers;  // w.r.t. the un-normalized inputs; empty unless requested
};

/// Standardizes each layer with `stats`, then mixes with softmax(w.raw).
Matrix weighted_sum(const std::vector<Matrix>& layers, const LayerWeights& w, const LayerNormStats& stats);
WeightedSumGrad weighted_sum_backward(const std::vector<Matrix>& layers, const LayerWeights& w,
                                      const LayerNormStats& stats, const Matrix& grad_out,
                                      bool want_layer_grads = false);

/// Layer importance: softmax weight times the mean L2 norm of that layer's
/// standardized frames, rescaled to sum to one.
std::vector<double> report_layer_importance(const LayerWeights& w, const std::vector<const Utterance*>& utterances,
                                            const LayerNormStats& stats);

/// Same formula from precomputed per-layer average norms.
std::vector<double> layer_importance_from_norms(const LayerWeights& w, const std::vector<double>& avg_norms);

/// `layer,score` CSV with six decimals.
std::string layer_importance_csv(const std::vector<double>& scores);

}  // namespace cslid
