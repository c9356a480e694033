#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cslid/common.hpp"
#include "cslid/corpus.hpp"
#include "cslid/features.hpp"
#include "cslid/fusion.hpp"
#include "cslid/lid.hpp"
#include "cslid/nn.hpp"

namespace cslid {

/// Training strategy families.
///   BaselineCtc          single raw layer, CTC only
///   BaselineCtcLid       single raw layer, joint CTC-LID from scratch
///   SslCtc               weighted layer stack, CTC only
///   SeparateCtcLid       CTC and LID trained apart, probabilities multiplied at decode
///   JointFromScratch     joint loss from random init
///   SeparateThenJointFT  SeparateCtcLid, then joint fine-tuning
enum class Strategy { BaselineCtc, BaselineCtcLid, SslCtc, SeparateCtcLid, JointFromScratch, SeparateThenJointFT };

/// CLI mnemonics: baseline, baseline-lid, ctc, separate, joint, separate-ft.
std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);
bool strategy_has_lid(Strategy s);
bool strategy_uses_layer_stack(Strategy s);

enum class DecodeFusion { None, Multiply, Logit };
DecodeFusion decode_fusion(Strategy s);

struct ModelConfig {
  Strategy strategy = Strategy::SeparateThenJointFT;
  bool has_ctc = true;
  bool has_lid = true;
  // Weighted sum over all layers, or the single layer `feature_layer`.
  bool weighted_features = true;
  int feature_layer = 0;
  int layer_count = 1;
  int feature_dim = 1;
  EncoderConfig ctc_encoder{EncoderKind::BiRecurrent, 32, 2, 2};
  LidHeadKind lid_head = LidHeadKind::Recurrent;
  EncoderConfig lid_encoder{EncoderKind::BiRecurrent, 32, 1, 2};
};

/// Which loss is being optimized.
enum class Phase { Ctc, Lid, Joint };
std::string_view to_string(Phase p);

struct ModelOutputs {
  Matrix z;  // CTC logits, T x |V| (empty without a CTC branch)
  Matrix u;  // LID logits, T x 3 (empty without a LID branch)
};

struct UtteranceLoss {
  double loss = 0.0;
  bool feasible = true;
};

/// All trainable parameters plus frozen normalization statistics and the
/// vocabulary. Parameters live in one flat vector: the CTC branch first, then
/// the LID branch, so each branch is a contiguous range.
class JointModel {
 public:
  struct Range {
    Eigen::Index begin = 0;
    Eigen::Index end = 0;
    Eigen::Index size() const { return end - begin; }
  };

  struct BranchCache {
    Matrix input;  // combined (and masked) features
    EncoderHead::Cache head;
  };
  struct Cache {
    BranchCache ctc;
    BranchCache lid;
  };

  JointModel(ModelConfig cfg, Vocabulary vocab, LayerNormStats stats, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  const TokenTypeMap& token_types() const { return token_types_; }
  const LayerNormStats& norm_stats() const { return stats_; }
  const ParameterLayout& layout() const { return layout_; }
  const Vector& params() const { return params_; }
  Vector& params() { return params_; }
  Range ctc_range() const { return ctc_range_; }
  Range lid_range() const { return lid_range_; }
  bool has_ctc() const { return cfg_.has_ctc; }
  bool has_lid() const { return cfg_.has_lid; }

  /// Mixing weights of a branch (empty when the branch uses a single layer).
  std::optional<LayerWeights> ctc_layer_weights() const;
  std::optional<LayerWeights> lid_layer_weights() const;

  /// Standardizes an utterance's layers with the frozen statistics.
  std::vector<Matrix> normalize(const Utterance& utt) const;

  /// Forward pass on standardized layers. `mask`, when given, is applied to
  /// each branch's combined features.
  ModelOutputs forward(const Vector& params, const std::vector<Matrix>& normalized, const SpecAugmentMask* mask,
                       Cache& cache, bool run_ctc = true, bool run_lid = true) const;
  ModelOutputs forward(const std::vector<Matrix>& normalized) const;

  /// Accumulates gradients of both branches into `grads`. Either gradient may
  /// be empty to skip that branch.
  void backward(const Vector& params, const std::vector<Matrix>& normalized, const SpecAugmentMask* mask,
                const Cache& cache, const Matrix& grad_z, const Matrix& grad_u, Vector& grads) const;

  /// Loss and gradient for one utterance under the given phase.
  UtteranceLoss loss_and_gradient(const Vector& params, const std::vector<Matrix>& normalized,
                                  const std::vector<int>& target, const LidLabelSeq& labels, Phase phase,
                                  double lambda, const SpecAugmentMask* mask, Vector& grads) const;

  /// Per-frame token log-probabilities used for decoding, following the
  /// strategy's fusion rule. `fallback_frames` counts multiply-fusion rows
  /// that had to fall back to the unfused distribution.
  Matrix decode_log_probs(const ModelOutputs& out, DecodeFusion fusion, int* fallback_frames = nullptr) const;
  DecodeFusion decode_fusion() const { return cslid::decode_fusion(cfg_.strategy); }

  std::string to_json() const;
  static JointModel from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static JointModel load(const std::filesystem::path& path);

 private:
  struct Branch {
    bool weighted = true;
    int single_layer = 0;
    Segment layer_weights;
    EncoderHead head;
  };

  Matrix branch_input(const Branch& b, const Vector& params, const std::vector<Matrix>& normalized) const;
  Matrix run_branch(const Branch& b, const Vector& params, const std::vector<Matrix>& normalized,
                    const SpecAugmentMask* mask, BranchCache& cache) const;
  void backward_branch(const Branch& b, const Vector& params, const std::vector<Matrix>& normalized,
                       const SpecAugmentMask* mask, const BranchCache& cache, const Matrix& grad_out,
                       Vector& grads) const;

  ModelConfig cfg_;
  Vocabulary vocab_;
  TokenTypeMap token_types_;
  LayerNormStats stats_;
  ParameterLayout layout_;
  Vector params_;
  std::optional<Branch> ctc_;
  std::optional<Branch> lid_;
  Range ctc_range_;
  Range lid_range_;
};

}  // namespace cslid
