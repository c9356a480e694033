#include "cslid/features.hpp"

#include <cstdio>
#include <numeric>

namespace cslid {

LayerNormStats fit_norm_stats(const std::vector<const Utterance*>& train) {
  CSLID_CHECK(!train.empty(), "cannot fit normalization statistics on an empty split");
  const int layers = train.front()->layer_count();
  const int dim = train.front()->dim();
  LayerNormStats stats;
  for (int l = 0; l < layers; ++l) {
    // Two passes for numerical sanity: mean first, then centered second moment.
    RowVector sum = RowVector::Zero(dim);
    double count = 0.0;
    for (const auto* utt : train) {
      CSLID_CHECK(utt->layer_count() == layers && utt->dim() == dim,
                  "utterance '" + utt->id + "' shape differs from the rest of the split");
      sum += utt->layers[l].colwise().sum();
      count += static_cast<double>(utt->frames());
    }
    RowVector mean = sum / count;
    RowVector sq = RowVector::Zero(dim);
    for (const auto* utt : train) {
      sq += (utt->layers[l].rowwise() - mean).array().square().matrix().colwise().sum();
    }
    RowVector std = (sq / count).array().sqrt().max(LayerNormStats::kStdFloor).matrix();
    stats.mean.push_back(std::move(mean));
    stats.std.push_back(std::move(std));
  }
  return stats;
}

Matrix normalize_layer(const Matrix& layer, const LayerNormStats& stats, int l) {
  return ((layer.rowwise() - stats.mean[l]).array().rowwise() / stats.std[l].array()).matrix();
}

std::vector<Matrix> normalize_layers(const std::vector<Matrix>& layers, const LayerNormStats& stats) {
  CSLID_CHECK(static_cast<int>(layers.size()) == stats.layer_count(), "layer count does not match statistics");
  std::vector<Matrix> out;
  out.reserve(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    CSLID_CHECK(layers[l].cols() == stats.mean[l].cols(), "feature dim does not match statistics");
    out.push_back(normalize_layer(layers[l], stats, static_cast<int>(l)));
  }
  return out;
}

Vector softmax(const Eigen::Ref<const Vector>& raw) {
  Vector e = (raw.array() - raw.maxCoeff()).exp();
  return e / e.sum();
}

Vector LayerWeights::simplex() const { return softmax(raw); }

Matrix combine_layers(const std::vector<Matrix>& normalized, const Eigen::Ref<const Vector>& raw) {
  CSLID_CHECK(static_cast<Eigen::Index>(normalized.size()) == raw.size(), "layer count does not match weights");
  const Vector w = softmax(raw);
  Matrix out = w(0) * normalized[0];
  for (std::size_t l = 1; l < normalized.size(); ++l) out += w(l) * normalized[l];
  return out;
}

Vector combine_layers_backward(const std::vector<Matrix>& normalized, const Eigen::Ref<const Vector>& raw,
                               const Matrix& grad_out) {
  CSLID_CHECK(static_cast<Eigen::Index>(normalized.size()) == raw.size(), "layer count does not match weights");
  const Vector w = softmax(raw);
  Vector s(raw.size());
  for (Eigen::Index l = 0; l < raw.size(); ++l) s(l) = normalized[l].cwiseProduct(grad_out).sum();
  const double mean_s = w.dot(s);
  return (w.array() * (s.array() - mean_s)).matrix();
}

Matrix weighted_sum(const std::vector<Matrix>& layers, const LayerWeights& w, const LayerNormStats& stats) {
  CSLID_CHECK(static_cast<Eigen::Index>(layers.size()) == w.raw.size(), "layer count does not match weights");
  return combine_layers(normalize_layers(layers, stats), w.raw);
}

WeightedSumGrad weighted_sum_backward(const std::vector<Matrix>& layers, const LayerWeights& w,
                                      const LayerNormStats& stats, const Matrix& grad_out, bool want_layer_grads) {
  CSLID_CHECK(static_cast<Eigen::Index>(layers.size()) == w.raw.size(), "layer count does not match weights");
  WeightedSumGrad g;
  g.raw = combine_layers_backward(normalize_layers(layers, stats), w.raw, grad_out);
  if (want_layer_grads) {
    const Vector simplex = w.simplex();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      g.layers.push_back((simplex(l) * grad_out.array()).rowwise() / stats.std[l].array());
    }
  }
  return g;
}

std::vector<double> layer_importance_from_norms(const LayerWeights& w, const std::vector<double>& avg_norms) {
  CSLID_CHECK(static_cast<Eigen::Index>(avg_norms.size()) == w.raw.size(), "layer count does not match weights");
  const Vector simplex = w.simplex();
  std::vector<double> scores(avg_norms.size());
  for (std::size_t l = 0; l < scores.size(); ++l) scores[l] = simplex(l) * avg_norms[l];
  const double total = std::accumulate(scores.begin(), scores.end(), 0.0);
  if (total > 0.0) {
    for (double& s : scores) s /= total;
  }
  return scores;
}

std::vector<double> report_layer_importance(const LayerWeights& w, const std::vector<const Utterance*>& utterances,
                                            const LayerNormStats& stats) {
  const int layers = static_cast<int>(w.raw.size());
  std::vector<double> norm_sum(layers, 0.0);
  double frames = 0.0;
  for (const auto* utt : utterances) {
    const auto normalized = normalize_layers(utt->layers, stats);
    for (int l = 0; l < layers; ++l) norm_sum[l] += normalized[l].rowwise().norm().sum();
    frames += utt->frames();
  }
  if (frames > 0.0) {
    for (double& s : norm_sum) s /= frames;
  }
  return layer_importance_from_norms(w, norm_sum);
}

std::string layer_importance_csv(const std::vector<double>& scores) {
  std::string out = "layer,score\n";
  char line[64];
  for (std::size_t l = 0; l < scores.size(); ++l) {
    std::snprintf(line, sizeof(line), "%zu,%.6f\n", l, scores[l]);
    out += line;
  }
  return out;
}

}  // namespace cslid
