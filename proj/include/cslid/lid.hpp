#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "cslid/common.hpp"
#include "cslid/corpus.hpp"
#include "cslid/nn.hpp"

namespace cslid {

/// Probe heads: a single affine layer, or a bidirectional recurrent encoder
/// followed by one.
enum class LidHeadKind { FullyConnected, Recurrent };
std::string_view to_string(LidHeadKind kind);
LidHeadKind parse_lid_head(std::string_view name);

/// Builds a 3-class frame classifier over `input_dim` features. Class order is
/// [Silence, LangA, LangB].
EncoderHead make_lid_head(ParameterLayout& layout, const std::string& prefix, int input_dim, LidHeadKind kind,
                          const EncoderConfig& recurrent = {});

/// T x 3 logits.
Matrix lid_forward(const EncoderHead& head, const Vector& params, const Matrix& features);

struct LidLoss {
  double loss = 0.0;  // mean nats per frame
  Matrix grad;        // (softmax - onehot) / T
};

LidLoss lid_ce_loss(const Matrix& logits, const LidLabelSeq& labels);

struct LidAccuracy {
  long correct = 0;
  long total = 0;
  // confusion[reference][predicted]
  std::array<std::array<long, kNumLidClasses>, kNumLidClasses> confusion{};

  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
  /// Recall of one reference class; NaN when the class never occurs.
  double recall(LanguageTag cls) const;
  LidAccuracy& operator+=(const LidAccuracy& other);
};

/// Per-frame argmax (ties to the lowest class) against the labels.
LidAccuracy frame_accuracy(const Matrix& logits, const LidLabelSeq& labels);

struct ProbeRow {
  std::string head;
  std::string split;
  double accuracy = 0.0;
};

/// `head,split,accuracy` CSV.
std::string probe_report_csv(const std::vector<ProbeRow>& rows);

}  // namespace cslid
