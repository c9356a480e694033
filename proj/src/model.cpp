#include "cslid/model.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "cslid/ctc.hpp"

namespace cslid {

using nlohmann::json;

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::BaselineCtc:
      return "baseline";
    case Strategy::BaselineCtcLid:
      return "baseline-lid";
    case Strategy::SslCtc:
      return "ctc";
    case Strategy::SeparateCtcLid:
      return "separate";
    case Strategy::JointFromScratch:
      return "joint";
    case Strategy::SeparateThenJointFT:
      return "separate-ft";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::BaselineCtc, Strategy::BaselineCtcLid, Strategy::SslCtc, Strategy::SeparateCtcLid,
                     Strategy::JointFromScratch, Strategy::SeparateThenJointFT}) {
    if (to_string(s) == name) return s;
  }
  throw ValidationError("unknown strategy '" + std::string(name) +
                        "' (expected baseline, baseline-lid, ctc, separate, joint or separate-ft)");
}

bool strategy_has_lid(Strategy s) { return s != Strategy::BaselineCtc && s != Strategy::SslCtc; }

bool strategy_uses_layer_stack(Strategy s) {
  return s != Strategy::BaselineCtc && s != Strategy::BaselineCtcLid;
}

DecodeFusion decode_fusion(Strategy s) {
  switch (s) {
    case Strategy::BaselineCtc:
    case Strategy::SslCtc:
      return DecodeFusion::None;
    case Strategy::SeparateCtcLid:
      return DecodeFusion::Multiply;
    default:
      return DecodeFusion::Logit;
  }
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Ctc:
      return "ctc";
    case Phase::Lid:
      return "lid";
    case Phase::Joint:
      return "joint";
  }
  return "?";
}

JointModel::JointModel(ModelConfig cfg, Vocabulary vocab, LayerNormStats stats, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      vocab_(std::move(vocab)),
      token_types_(TokenTypeMap::from_vocab(vocab_)),
      stats_(std::move(stats)) {
  CSLID_CHECK(cfg_.has_ctc || cfg_.has_lid, "model needs at least one branch");
  CSLID_CHECK(stats_.layer_count() == cfg_.layer_count, "normalization statistics do not match the layer count");
  CSLID_CHECK(cfg_.feature_layer >= 0 && cfg_.feature_layer < cfg_.layer_count, "feature layer out of range");

  auto make_branch = [&](const std::string& prefix, const std::optional<EncoderConfig>& encoder, int out_dim) {
    Branch b;
    b.weighted = cfg_.weighted_features;
    b.single_layer = cfg_.feature_layer;
    if (b.weighted) b.layer_weights = layout_.add(prefix + ".layer_weights", cfg_.layer_count, 1);
    b.head = EncoderHead(layout_, prefix, cfg_.feature_dim, encoder, out_dim);
    return b;
  };
  if (cfg_.has_ctc) {
    ctc_ = make_branch("ctc", cfg_.ctc_encoder, vocab_.size());
  }
  ctc_range_ = {0, layout_.size()};
  if (cfg_.has_lid) {
    std::optional<EncoderConfig> enc;
    if (cfg_.lid_head == LidHeadKind::Recurrent) enc = cfg_.lid_encoder;
    lid_ = make_branch("lid", enc, kNumLidClasses);
  }
  lid_range_ = {ctc_range_.end, layout_.size()};

  params_ = Vector::Zero(layout_.size());
  std::mt19937_64 rng(derive_seed(seed, 0x1417));
  // Layer weights start uniform (raw = 0); everything else is U(+-1/sqrt(fan_in)).
  if (ctc_) ctc_->head.init(params_, rng);
  if (lid_) lid_->head.init(params_, rng);
}

std::optional<LayerWeights> JointModel::ctc_layer_weights() const {
  if (!ctc_ || !ctc_->weighted) return std::nullopt;
  return LayerWeights{view(params_, ctc_->layer_weights).col(0)};
}

std::optional<LayerWeights> JointModel::lid_layer_weights() const {
  if (!lid_ || !lid_->weighted) return std::nullopt;
  return LayerWeights{view(params_, lid_->layer_weights).col(0)};
}

std::vector<Matrix> JointModel::normalize(const Utterance& utt) const {
  CSLID_CHECK(utt.layer_count() == cfg_.layer_count && utt.dim() == cfg_.feature_dim,
              "utterance '" + utt.id + "' does not match the model's layer count / feature dim");
  return normalize_layers(utt.layers, stats_);
}

Matrix JointModel::branch_input(const Branch& b, const Vector& params, const std::vector<Matrix>& normalized) const {
  CSLID_CHECK(static_cast<int>(normalized.size()) == cfg_.layer_count, "layer count mismatch");
  if (!b.weighted) return normalized[b.single_layer];
  return combine_layers(normalized, view(params, b.layer_weights).col(0));
}

Matrix JointModel::run_branch(const Branch& b, const Vector& params, const std::vector<Matrix>& normalized,
                              const SpecAugmentMask* mask, BranchCache& cache) const {
  cache.input = branch_input(b, params, normalized);
  if (mask) apply_spec_augment_mask(cache.input, *mask);
  return b.head.forward(params, cache.input, cache.head);
}

void JointModel::backward_branch(const Branch& b, const Vector& params, const std::vector<Matrix>& normalized,
                                 const SpecAugmentMask* mask, const BranchCache& cache, const Matrix& grad_out,
                                 Vector& grads) const {
  Matrix grad_input = b.head.backward(params, cache.head, grad_out, grads);
  if (!b.weighted) return;
  if (mask) apply_spec_augment_mask(grad_input, *mask);
  view(grads, b.layer_weights).col(0) +=
      combine_layers_backward(normalized, view(params, b.layer_weights).col(0), grad_input);
}

ModelOutputs JointModel::forward(const Vector& params, const std::vector<Matrix>& normalized,
                                 const SpecAugmentMask* mask, Cache& cache, bool run_ctc, bool run_lid) const {
  ModelOutputs out;
  if (ctc_ && run_ctc) out.z = run_branch(*ctc_, params, normalized, mask, cache.ctc);
  if (lid_ && run_lid) out.u = run_branch(*lid_, params, normalized, mask, cache.lid);
  return out;
}

ModelOutputs JointModel::forward(const std::vector<Matrix>& normalized) const {
  Cache cache;
  return forward(params_, normalized, nullptr, cache);
}

void JointModel::backward(const Vector& params, const std::vector<Matrix>& normalized, const SpecAugmentMask* mask,
                          const Cache& cache, const Matrix& grad_z, const Matrix& grad_u, Vector& grads) const {
  if (ctc_ && grad_z.size() > 0) backward_branch(*ctc_, params, normalized, mask, cache.ctc, grad_z, grads);
  if (lid_ && grad_u.size() > 0) backward_branch(*lid_, params, normalized, mask, cache.lid, grad_u, grads);
}

UtteranceLoss JointModel::loss_and_gradient(const Vector& params, const std::vector<Matrix>& normalized,
                                            const std::vector<int>& target, const LidLabelSeq& labels, Phase phase,
                                            double lambda, const SpecAugmentMask* mask, Vector& grads) const {
  Cache cache;
  UtteranceLoss result;
  switch (phase) {
    case Phase::Ctc: {
      CSLID_CHECK(ctc_.has_value(), "CTC phase on a model without a CTC branch");
      const ModelOutputs out = forward(params, normalized, mask, cache, true, false);
      const CtcResult ctc = ctc_loss(log_softmax_rows(out.z), target, Vocabulary::kBlank);
      result.loss = ctc.loss;
      result.feasible = ctc.feasible;
      if (ctc.feasible) backward(params, normalized, mask, cache, ctc.grad_logits, Matrix(), grads);
      break;
    }
    case Phase::Lid: {
      CSLID_CHECK(lid_.has_value(), "LID phase on a model without a LID branch");
      const ModelOutputs out = forward(params, normalized, mask, cache, false, true);
      const LidLoss ce = lid_ce_loss(out.u, labels);
      result.loss = ce.loss;
      backward(params, normalized, mask, cache, Matrix(), ce.grad, grads);
      break;
    }
    case Phase::Joint: {
      CSLID_CHECK(ctc_.has_value() && lid_.has_value(), "joint phase needs both branches");
      const ModelOutputs out = forward(params, normalized, mask, cache);
      const JointLoss jl = joint_loss(out.z, out.u, target, labels, FusionLossConfig{lambda}, token_types_);
      result.loss = jl.loss;
      result.feasible = jl.feasible;
      if (jl.feasible) backward(params, normalized, mask, cache, jl.grad_z, jl.grad_u, grads);
      break;
    }
  }
  return result;
}

Matrix JointModel::decode_log_probs(const ModelOutputs& out, DecodeFusion fusion, int* fallback_frames) const {
  CSLID_CHECK(out.z.size() > 0, "decoding needs CTC logits");
  if (fallback_frames) *fallback_frames = 0;
  switch (fusion) {
    case DecodeFusion::None:
      return log_softmax_rows(out.z);
    case DecodeFusion::Logit:
      CSLID_CHECK(out.u.size() > 0, "logit fusion needs LID logits");
      return fuse_logits(out.z, out.u, token_types_);
    case DecodeFusion::Multiply: {
      CSLID_CHECK(out.u.size() > 0, "multiply fusion needs LID logits");
      const MultiplyFused fused = multiply_fuse(softmax_rows(out.z), softmax_rows(out.u), token_types_);
      if (fallback_frames) *fallback_frames = fused.fallback_frames;
      return fused.probs.array().log();
    }
  }
  return {};
}

// --- Checkpoints ------------------------------------------------------------

namespace {

json encoder_to_json(const EncoderConfig& e) {
  return {{"kind", to_string(e.kind)},
          {"hidden_dim", e.hidden_dim},
          {"depth", e.depth},
          {"context_radius", e.context_radius}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig e;
  e.kind = parse_encoder_kind(j.at("kind").get<std::string>());
  e.hidden_dim = j.at("hidden_dim").get<int>();
  e.depth = j.at("depth").get<int>();
  e.context_radius = j.at("context_radius").get<int>();
  return e;
}

json row_to_json(const RowVector& r) { return std::vector<double>(r.data(), r.data() + r.size()); }

RowVector row_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const RowVector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string JointModel::to_json() const {
  json vocab = json::array();
  for (int i = 1; i < vocab_.size(); ++i) {
    vocab.push_back({{"token", vocab_.token(i)}, {"lang", to_string(vocab_.lang(i))}});
  }
  json stats = {{"source_split", stats_.source_split}, {"mean", json::array()}, {"std", json::array()}};
  for (int l = 0; l < stats_.layer_count(); ++l) {
    stats["mean"].push_back(row_to_json(stats_.mean[l]));
    stats["std"].push_back(row_to_json(stats_.std[l]));
  }
  json segments = json::array();
  for (const auto& s : layout_.segments()) {
    segments.push_back({{"name", s.name},
                        {"rows", s.rows},
                        {"cols", s.cols},
                        {"values", std::vector<double>(params_.data() + s.offset, params_.data() + s.offset + s.size())}});
  }
  json j = {{"format", "cslid-model/1"},
            {"strategy", to_string(cfg_.strategy)},
            {"has_ctc", cfg_.has_ctc},
            {"has_lid", cfg_.has_lid},
            {"weighted_features", cfg_.weighted_features},
            {"feature_layer", cfg_.feature_layer},
            {"layer_count", cfg_.layer_count},
            {"feature_dim", cfg_.feature_dim},
            {"ctc_encoder", encoder_to_json(cfg_.ctc_encoder)},
            {"lid_head", to_string(cfg_.lid_head)},
            {"lid_encoder", encoder_to_json(cfg_.lid_encoder)},
            {"vocab_hash", vocab_.hash()},
            {"vocab", vocab},
            {"norm_stats", stats},
            {"segments", segments}};
  return j.dump(1) + "\n";
}

JointModel JointModel::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    CSLID_CHECK(j.at("format").get<std::string>() == "cslid-model/1", "unsupported checkpoint format");
    ModelConfig cfg;
    cfg.strategy = parse_strategy(j.at("strategy").get<std::string>());
    cfg.has_ctc = j.at("has_ctc").get<bool>();
    cfg.has_lid = j.at("has_lid").get<bool>();
    cfg.weighted_features = j.at("weighted_features").get<bool>();
    cfg.feature_layer = j.at("feature_layer").get<int>();
    cfg.layer_count = j.at("layer_count").get<int>();
    cfg.feature_dim = j.at("feature_dim").get<int>();
    cfg.ctc_encoder = encoder_from_json(j.at("ctc_encoder"));
    cfg.lid_head = parse_lid_head(j.at("lid_head").get<std::string>());
    cfg.lid_encoder = encoder_from_json(j.at("lid_encoder"));

    Vocabulary vocab;
    for (const auto& e : j.at("vocab")) {
      vocab.add(e.at("token").get<std::string>(), parse_language(e.at("lang").get<std::string>()));
    }
    CSLID_CHECK(vocab.hash() == j.at("vocab_hash").get<std::string>(), "checkpoint vocabulary hash mismatch");

    LayerNormStats stats;
    stats.source_split = j.at("norm_stats").at("source_split").get<std::string>();
    for (const auto& r : j.at("norm_stats").at("mean")) stats.mean.push_back(row_from_json(r));
    for (const auto& r : j.at("norm_stats").at("std")) stats.std.push_back(row_from_json(r));

    JointModel model(cfg, std::move(vocab), std::move(stats), 0);
    const auto& segs = j.at("segments");
    CSLID_CHECK(segs.size() == model.layout_.segments().size(), "checkpoint segment count mismatch");
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const Segment& s = model.layout_.segments()[i];
      CSLID_CHECK(segs[i].at("name").get<std::string>() == s.name && segs[i].at("rows").get<Eigen::Index>() == s.rows &&
                      segs[i].at("cols").get<Eigen::Index>() == s.cols,
                  "checkpoint segment '" + s.name + "' does not match the model layout");
      const auto values = segs[i].at("values").get<std::vector<double>>();
      CSLID_CHECK(static_cast<Eigen::Index>(values.size()) == s.size(), "segment '" + s.name + "' has wrong length");
      std::copy(values.begin(), values.end(), model.params_.data() + s.offset);
    }
    return model;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
}

void JointModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json();
}

JointModel JointModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace cslid
