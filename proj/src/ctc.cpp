#include "cslid/ctc.hpp"

#include "cslid/parallel.hpp"

namespace cslid {

namespace {

std::vector<int> extend_target(const std::vector<int>& target, int blank) {
  std::vector<int> ext(2 * target.size() + 1, blank);
  for (std::size_t u = 0; u < target.size(); ++u) ext[2 * u + 1] = target[u];
  return ext;
}

// A skip from s-2 to s is allowed when s is a label that differs from the
// label two positions back.
bool can_skip(const std::vector<int>& ext, std::size_t s, int blank) {
  return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
}

struct Lattice {
  std::vector<int> ext;
  Matrix alpha;  // log forward variables, emission at t included
  Matrix beta;   // log backward variables, emission at t included
  double log_likelihood = kNegInf;
};

Lattice forward_backward(const Matrix& lp, const std::vector<int>& target, int blank) {
  Lattice lat;
  lat.ext = extend_target(target, blank);
  const auto& ext = lat.ext;
  const Eigen::Index frames = lp.rows();
  const Eigen::Index states = static_cast<Eigen::Index>(ext.size());

  lat.alpha = Matrix::Constant(frames, states, kNegInf);
  lat.alpha(0, 0) = lp(0, ext[0]);
  if (states > 1) lat.alpha(0, 1) = lp(0, ext[1]);
  for (Eigen::Index t = 1; t < frames; ++t) {
    for (Eigen::Index s = 0; s < states; ++s) {
      double acc = lat.alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, lat.alpha(t - 1, s - 1));
      if (can_skip(ext, s, blank)) acc = log_add(acc, lat.alpha(t - 1, s - 2));
      if (acc != kNegInf) lat.alpha(t, s) = acc + lp(t, ext[s]);
    }
  }

  lat.beta = Matrix::Constant(frames, states, kNegInf);
  lat.beta(frames - 1, states - 1) = lp(frames - 1, ext[states - 1]);
  if (states > 1) lat.beta(frames - 1, states - 2) = lp(frames - 1, ext[states - 2]);
  for (Eigen::Index t = frames - 2; t >= 0; --t) {
    for (Eigen::Index s = 0; s < states; ++s) {
      double acc = lat.beta(t + 1, s);
      if (s + 1 < states) acc = log_add(acc, lat.beta(t + 1, s + 1));
      if (s + 2 < states && can_skip(ext, s + 2, blank)) acc = log_add(acc, lat.beta(t + 1, s + 2));
      if (acc != kNegInf) lat.beta(t, s) = acc + lp(t, ext[s]);
    }
  }

  double ll = lat.alpha(frames - 1, states - 1);
  if (states > 1) ll = log_add(ll, lat.alpha(frames - 1, states - 2));
  lat.log_likelihood = ll;
  return lat;
}

Matrix occupancy_from(const Lattice& lat, const Matrix& lp) {
  const Eigen::Index frames = lp.rows();
  const Eigen::Index states = static_cast<Eigen::Index>(lat.ext.size());
  Matrix occ = Matrix::Zero(frames, states);
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (Eigen::Index s = 0; s < states; ++s) {
      const double a = lat.alpha(t, s);
      const double b = lat.beta(t, s);
      if (a == kNegInf || b == kNegInf) continue;
      occ(t, s) = std::exp(a + b - lp(t, lat.ext[s]) - lat.log_likelihood);
    }
  }
  return occ;
}

void check_inputs(const Matrix& lp, const std::vector<int>& target, int blank) {
  CSLID_CHECK(lp.rows() >= 1, "CTC needs at least one frame");
  CSLID_CHECK(blank >= 0 && blank < lp.cols(), "blank index outside the vocabulary");
  for (int tok : target) {
    CSLID_CHECK(tok >= 0 && tok < lp.cols() && tok != blank, "CTC target contains blank or out-of-range token");
  }
}

}  // namespace

int ctc_min_frames(const std::vector<int>& target) {
  int frames = static_cast<int>(target.size());
  for (std::size_t u = 1; u < target.size(); ++u) {
    if (target[u] == target[u - 1]) ++frames;
  }
  return frames;
}

CtcResult ctc_loss(const Matrix& log_probs, const std::vector<int>& target, int blank) {
  check_inputs(log_probs, target, blank);
  CtcResult result;
  if (log_probs.rows() < ctc_min_frames(target)) {
    result.loss = kInf;
    result.feasible = false;
    result.grad_logits = Matrix::Zero(log_probs.rows(), log_probs.cols());
    return result;
  }
  const Lattice lat = forward_backward(log_probs, target, blank);
  if (lat.log_likelihood == kNegInf) {
    result.loss = kInf;
    result.feasible = false;
    result.grad_logits = Matrix::Zero(log_probs.rows(), log_probs.cols());
    return result;
  }
  result.loss = -lat.log_likelihood;
  result.occupancy = occupancy_from(lat, log_probs);
  result.grad_logits = log_probs.array().exp();
  for (Eigen::Index t = 0; t < log_probs.rows(); ++t) {
    for (Eigen::Index s = 0; s < result.occupancy.cols(); ++s) {
      result.grad_logits(t, lat.ext[s]) -= result.occupancy(t, s);
    }
  }
  return result;
}

Matrix ctc_occupancy(const Matrix& log_probs, const std::vector<int>& target, int blank) {
  check_inputs(log_probs, target, blank);
  if (log_probs.rows() < ctc_min_frames(target)) return {};
  const Lattice lat = forward_backward(log_probs, target, blank);
  if (lat.log_likelihood == kNegInf) return {};
  return occupancy_from(lat, log_probs);
}

std::vector<int> greedy_decode(const Matrix& log_probs, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (Eigen::Index t = 0; t < log_probs.rows(); ++t) {
    const int best = static_cast<int>(argmax_row(log_probs.row(t)));
    if (best != prev && best != blank) out.push_back(best);
    prev = best;
  }
  return out;
}

std::vector<CtcResult> ctc_loss_batch(const std::vector<Matrix>& log_probs,
                                      const std::vector<std::vector<int>>& targets, int workers, int blank) {
  CSLID_CHECK(log_probs.size() == targets.size(), "batch sizes differ");
  std::vector<CtcResult> out(log_probs.size());
  parallel_for(log_probs.size(), workers, [&](std::size_t i) { out[i] = ctc_loss(log_probs[i], targets[i], blank); });
  return out;
}

std::vector<CtcResult> ctc_loss_batch_serial(const std::vector<Matrix>& log_probs,
                                             const std::vector<std::vector<int>>& targets, int blank) {
  CSLID_CHECK(log_probs.size() == targets.size(), "batch sizes differ");
  std::vector<CtcResult> out(log_probs.size());
  serial_for(log_probs.size(), [&](std::size_t i) { out[i] = ctc_loss(log_probs[i], targets[i], blank); });
  return out;
}

}  // namespace cslid
