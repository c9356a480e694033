#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cslid/corpus.hpp"
#include "cslid/lid.hpp"
#include "cslid/metrics.hpp"
#include "cslid/model.hpp"

namespace cslid {

enum class ModelSelection { BestValidation, LastEpoch };

struct TrainConfig {
  Strategy strategy = Strategy::SeparateThenJointFT;
  double lambda = 0.1;
  double learning_rate = 1e-3;
  // Fine-tuning restarts Adam with lr * ft_lr_scale.
  double ft_lr_scale = 0.1;
  int epochs = 30;
  int ft_epochs = 10;
  int batch_size = 8;
  std::uint64_t seed = 1;
  bool spec_augment = true;
  SpecAugmentConfig augment{2, 5, 2, 2, 0};
  EncoderConfig ctc_encoder{EncoderKind::BiRecurrent, 32, 2, 2};
  EncoderConfig lid_encoder{EncoderKind::BiRecurrent, 32, 1, 2};
  // Input layer for the single-layer baselines.
  int feature_layer = 0;
  int workers = 1;
  // Wall-clock time is only measured when asked for, so logs stay reproducible.
  bool record_wall_time = false;
  ModelSelection selection = ModelSelection::BestValidation;
  // Restrict training to these ids (all of the train split when empty).
  std::vector<std::string> train_ids;
};

/// One JSON line per epoch.
struct EpochLog {
  int epoch = 0;
  std::string strategy;
  std::string phase;
  double train_loss = 0.0;
  std::optional<double> val_ter;
  std::optional<double> lid_acc;
  long wall_ms = 0;
  int skipped = 0;  // infeasible utterances

  std::string to_json_line() const;
};

/// Largest |gradient| seen on the branch that a phase must not touch.
struct GradientIsolation {
  double lid_grad_during_ctc_phase = 0.0;
  double ctc_grad_during_lid_phase = 0.0;
};

struct TrainResult {
  JointModel model;
  std::vector<EpochLog> log;
  GradientIsolation isolation;
};

/// Raised when a loss or gradient goes non-finite. Carries the last
/// parameters that produced finite values.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, JointModel last_good)
      : Error(what), last_good_(std::move(last_good)) {}
  const JointModel& last_good() const { return last_good_; }

 private:
  JointModel last_good_;
};

TrainResult train(const TrainConfig& config, const Corpus& corpus);

std::string training_log_jsonl(const std::vector<EpochLog>& log);

struct Evaluation {
  EvalReport report;
  std::optional<LidAccuracy> lid;
  int fallback_frames = 0;
};

/// Decodes every utterance of a split with the model's fusion rule.
Evaluation evaluate(const JointModel& model, const Corpus& corpus, Split split, int workers = 1);
Evaluation evaluate(const JointModel& model, const Corpus& corpus, const std::vector<const Utterance*>& utts,
                    int workers = 1);
/// Serial reference for evaluate().
Evaluation evaluate_serial(const JointModel& model, const Corpus& corpus, const std::vector<const Utterance*>& utts);

std::string evaluation_json(const Evaluation& eval, const std::string& split, const std::string& strategy);

/// Per-frame CSV: frame, top-k decode posteriors (token and probability), then
/// the three LID class posteriors when the model has a LID branch.
std::string export_posteriors(const JointModel& model, const Corpus& corpus, const std::string& utterance_id,
                              int top_k = 3);

struct ProbeConfig {
  LidHeadKind head = LidHeadKind::FullyConnected;
  EncoderConfig recurrent{EncoderKind::BiRecurrent, 32, 1, 2};
  double learning_rate = 3e-3;
  int epochs = 10;
  int batch_size = 8;
  std::uint64_t seed = 1;
  int workers = 1;
};

struct ProbeResult {
  JointModel model;
  std::vector<ProbeRow> rows;  // one per split with utterances
};

/// Trains a LID-only model (its own layer weights plus the head) with frame
/// cross-entropy and reports frame accuracy per split.
ProbeResult probe_lid(const ProbeConfig& config, const Corpus& corpus);

}  // namespace cslid
