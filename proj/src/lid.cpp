#include "cslid/lid.hpp"

#include <cstdio>
#include <limits>

namespace cslid {

std::string_view to_string(LidHeadKind kind) { return kind == LidHeadKind::Recurrent ? "recurrent" : "fc"; }

LidHeadKind parse_lid_head(std::string_view name) {
  if (name == "fc") return LidHeadKind::FullyConnected;
  if (name == "recurrent") return LidHeadKind::Recurrent;
  throw ValidationError("unknown LID head '" + std::string(name) + "' (expected fc or recurrent)");
}

EncoderHead make_lid_head(ParameterLayout& layout, const std::string& prefix, int input_dim, LidHeadKind kind,
                          const EncoderConfig& recurrent) {
  std::optional<EncoderConfig> encoder;
  if (kind == LidHeadKind::Recurrent) encoder = recurrent;
  return EncoderHead(layout, prefix, input_dim, encoder, kNumLidClasses);
}

Matrix lid_forward(const EncoderHead& head, const Vector& params, const Matrix& features) {
  return head.forward(params, features);
}

LidLoss lid_ce_loss(const Matrix& logits, const LidLabelSeq& labels) {
  CSLID_CHECK(logits.cols() == kNumLidClasses, "LID logits must have 3 columns");
  CSLID_CHECK(static_cast<std::size_t>(logits.rows()) == labels.size(),
              "LID logits have " + std::to_string(logits.rows()) + " frames but labels have " +
                  std::to_string(labels.size()));
  CSLID_CHECK(!labels.empty(), "LID loss needs at least one frame");
  const double frames = static_cast<double>(labels.size());
  const Matrix log_p = log_softmax_rows(logits);
  LidLoss out;
  out.grad = log_p.array().exp() / frames;
  double total = 0.0;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const int cls = static_cast<int>(labels[t]);
    total -= log_p(t, cls);
    out.grad(t, cls) -= 1.0 / frames;
  }
  out.loss = total / frames;
  return out;
}

double LidAccuracy::recall(LanguageTag cls) const {
  const auto& row = confusion[static_cast<int>(cls)];
  long n = 0;
  for (long c : row) n += c;
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(row[static_cast<int>(cls)]) / n;
}

LidAccuracy& LidAccuracy::operator+=(const LidAccuracy& other) {
  correct += other.correct;
  total += other.total;
  for (int i = 0; i < kNumLidClasses; ++i) {
    for (int j = 0; j < kNumLidClasses; ++j) confusion[i][j] += other.confusion[i][j];
  }
  return *this;
}

LidAccuracy frame_accuracy(const Matrix& logits, const LidLabelSeq& labels) {
  CSLID_CHECK(logits.cols() == kNumLidClasses, "LID logits must have 3 columns");
  CSLID_CHECK(static_cast<std::size_t>(logits.rows()) == labels.size(), "LID logits and labels differ in length");
  LidAccuracy acc;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const int predicted = static_cast<int>(argmax_row(logits.row(t)));
    const int reference = static_cast<int>(labels[t]);
    ++acc.confusion[reference][predicted];
    ++acc.total;
    if (predicted == reference) ++acc.correct;
  }
  return acc;
}

std::string probe_report_csv(const std::vector<ProbeRow>& rows) {
  std::string out = "head,split,accuracy\n";
  char line[128];
  for (const auto& row : rows) {
    std::snprintf(line, sizeof(line), "%s,%s,%.6f\n", row.head.c_str(), row.split.c_str(), row.accuracy);
    out += line;
  }
  return out;
}

}  // namespace cslid
