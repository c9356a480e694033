#include "cslid/fusion.hpp"

#include "cslid/ctc.hpp"
#include "cslid/lid.hpp"

namespace cslid {

TokenTypeMap TokenTypeMap::from_vocab(const Vocabulary& vocab) {
  TokenTypeMap l;
  l.cls.resize(vocab.size());
  for (int y = 0; y < vocab.size(); ++y) l.cls[y] = static_cast<int>(vocab.lang(y));
  return l;
}

namespace {
void check_shapes(const Matrix& z, const Matrix& u, const TokenTypeMap& l) {
  CSLID_CHECK(z.rows() == u.rows(), "CTC and LID logits differ in frame count");
  CSLID_CHECK(u.cols() == kNumLidClasses, "LID logits must have 3 columns");
  CSLID_CHECK(z.cols() == l.size(), "CTC logits width does not match the token type map");
}
}  // namespace

Matrix fused_logits(const Matrix& z, const Matrix& u, const TokenTypeMap& l) {
  check_shapes(z, u, l);
  Matrix out = z;
  for (int y = 0; y < l.size(); ++y) out.col(y) += u.col(l[y]);
  return out;
}

Matrix fuse_logits(const Matrix& z, const Matrix& u, const TokenTypeMap& l) {
  return log_softmax_rows(fused_logits(z, u, l));
}

FusionGrad fuse_logits_backward(const Matrix& grad_fused, const TokenTypeMap& l) {
  CSLID_CHECK(grad_fused.cols() == l.size(), "gradient width does not match the token type map");
  FusionGrad g;
  g.z = grad_fused;
  g.u = Matrix::Zero(grad_fused.rows(), kNumLidClasses);
  for (int y = 0; y < l.size(); ++y) g.u.col(l[y]) += grad_fused.col(y);
  return g;
}

JointLoss joint_loss(const Matrix& z, const Matrix& u, const std::vector<int>& target, const LidLabelSeq& labels,
                     const FusionLossConfig& cfg, const TokenTypeMap& l) {
  check_shapes(z, u, l);
  CSLID_CHECK(cfg.lambda >= 0.0 && cfg.lambda <= 1.0, "lambda must lie in [0, 1]");
  const double lambda = cfg.lambda;

  JointLoss out;
  const LidLoss ce = lid_ce_loss(u, labels);
  out.ce = ce.loss;
  out.grad_z = Matrix::Zero(z.rows(), z.cols());
  out.grad_u = lambda * ce.grad;
  if (lambda < 1.0) {
    const CtcResult ctc = ctc_loss(fuse_logits(z, u, l), target, Vocabulary::kBlank);
    out.ctc = ctc.loss;
    if (!ctc.feasible) {
      out.feasible = false;
      out.loss = kInf;
      out.grad_z.setZero();
      out.grad_u.setZero();
      return out;
    }
    const FusionGrad g = fuse_logits_backward(ctc.grad_logits, l);
    out.grad_z = (1.0 - lambda) * g.z;
    out.grad_u += (1.0 - lambda) * g.u;
    out.loss = (1.0 - lambda) * ctc.loss + lambda * ce.loss;
  } else {
    out.loss = ce.loss;
  }
  return out;
}

MultiplyFused multiply_fuse(const Matrix& ctc_probs, const Matrix& lid_probs, const TokenTypeMap& l) {
  check_shapes(ctc_probs, lid_probs, l);
  MultiplyFused out;
  out.probs.resize(ctc_probs.rows(), ctc_probs.cols());
  for (Eigen::Index t = 0; t < ctc_probs.rows(); ++t) {
    double mass = 0.0;
    for (int y = 0; y < l.size(); ++y) {
      out.probs(t, y) = ctc_probs(t, y) * lid_probs(t, l[y]);
      mass += out.probs(t, y);
    }
    if (mass > 0.0 && std::isfinite(mass)) {
      out.probs.row(t) /= mass;
    } else {
      out.probs.row(t) = ctc_probs.row(t);
      ++out.fallback_frames;
    }
  }
  return out;
}

}  // namespace cslid
