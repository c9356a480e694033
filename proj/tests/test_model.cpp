#include "cslid/model.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cslid/ctc.hpp"
#include "json.hpp"
#include "test_util.hpp"

namespace cslid {
namespace {

struct Fixture {
  Corpus corpus;
  LayerNormStats stats;

  Fixture() : corpus(generate_synthetic_corpus(testing::small_corpus_config(4, 12))) {
    stats = fit_norm_stats(corpus.split(Split::Train));
  }

  ModelConfig config(Strategy s, EncoderKind kind = EncoderKind::BiRecurrent) const {
    ModelConfig c;
    c.strategy = s;
    c.has_lid = strategy_has_lid(s);
    c.weighted_features = strategy_uses_layer_stack(s);
    c.layer_count = corpus.layer_count;
    c.feature_dim = corpus.feature_dim;
    c.ctc_encoder = {kind, 4, 2, 1};
    c.lid_encoder = {EncoderKind::BiRecurrent, 3, 1, 1};
    return c;
  }

  JointModel model(Strategy s, std::uint64_t seed = 3) const { return JointModel(config(s), corpus.vocab, stats, seed); }

  const Utterance& utt(int i = 0) const { return corpus.utterances.at(i); }
};

constexpr Strategy kAll[] = {Strategy::BaselineCtc,    Strategy::BaselineCtcLid,   Strategy::SslCtc,
                             Strategy::SeparateCtcLid, Strategy::JointFromScratch, Strategy::SeparateThenJointFT};

TEST(Strategy, NamesRoundTrip) {
  for (Strategy s : kAll) EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_EQ(to_string(Strategy::SeparateThenJointFT), "separate-ft");
  EXPECT_EQ(to_string(Strategy::SslCtc), "ctc");
  EXPECT_THROW(parse_strategy("beam"), ValidationError);
}

TEST(Strategy, FeatureSourcesAndFusion) {
  EXPECT_FALSE(strategy_uses_layer_stack(Strategy::BaselineCtc));
  EXPECT_TRUE(strategy_uses_layer_stack(Strategy::SslCtc));
  EXPECT_FALSE(strategy_has_lid(Strategy::SslCtc));
  EXPECT_EQ(decode_fusion(Strategy::SslCtc), DecodeFusion::None);
  EXPECT_EQ(decode_fusion(Strategy::SeparateCtcLid), DecodeFusion::Multiply);
  EXPECT_EQ(decode_fusion(Strategy::JointFromScratch), DecodeFusion::Logit);
  EXPECT_EQ(decode_fusion(Strategy::SeparateThenJointFT), DecodeFusion::Logit);
}

TEST(JointModel, BranchesOccupyDisjointContiguousRanges) {
  Fixture fx;
  for (Strategy s : kAll) {
    const JointModel m = fx.model(s);
    EXPECT_EQ(m.ctc_range().begin, 0);
    EXPECT_EQ(m.ctc_range().end, m.lid_range().begin);
    EXPECT_EQ(m.lid_range().end, m.params().size());
    EXPECT_EQ(m.lid_range().size() > 0, strategy_has_lid(s));
    for (const auto& seg : m.layout().segments()) {
      const bool in_ctc = seg.offset + seg.size() <= m.ctc_range().end;
      EXPECT_EQ(in_ctc, seg.name.rfind("ctc.", 0) == 0) << seg.name;
    }
    EXPECT_EQ(m.ctc_layer_weights().has_value(), strategy_uses_layer_stack(s));
  }
}

TEST(JointModel, InitialLayerWeightsUniformAndSeedDeterministic) {
  Fixture fx;
  const JointModel a = fx.model(Strategy::SeparateThenJointFT, 5);
  const JointModel b = fx.model(Strategy::SeparateThenJointFT, 5);
  const JointModel c = fx.model(Strategy::SeparateThenJointFT, 6);
  EXPECT_TRUE(a.params() == b.params());
  EXPECT_FALSE(a.params() == c.params());
  EXPECT_TRUE(a.ctc_layer_weights()->raw.isZero());
  EXPECT_TRUE(a.lid_layer_weights()->raw.isZero());
}

void audit_phase(const Fixture& fx, const JointModel& m, Phase phase, double lambda, const SpecAugmentMask* mask,
                 std::mt19937_64& rng) {
  const Utterance& u = fx.utt(1);
  const auto normalized = m.normalize(u);
  const auto labels = derive_lid_labels(u, fx.corpus.frame_rate_hz);
  Vector grads = Vector::Zero(m.params().size());
  const auto r = m.loss_and_gradient(m.params(), normalized, u.transcript, labels, phase, lambda, mask, grads);
  ASSERT_TRUE(r.feasible);
  auto f = [&](const Vector& p) {
    Vector scratch = Vector::Zero(p.size());
    return m.loss_and_gradient(p, normalized, u.transcript, labels, phase, lambda, mask, scratch).loss;
  };
  for (int i = 0; i < 3; ++i) {
    EXPECT_LT(testing::directional_check(f, m.params(), grads, testing::random_vector(rng, grads.size())), 1e-4)
        << to_string(m.config().strategy) << " phase " << to_string(phase);
  }
}

TEST(JointModel, GradientAuditEveryStrategyAndPhase) {
  Fixture fx;
  std::mt19937_64 rng(7);
  for (Strategy s : kAll) {
    JointModel m = fx.model(s);
    // Move layer weights off the uniform point.
    m.params() += 0.1 * testing::random_vector(rng, m.params().size());
    audit_phase(fx, m, Phase::Ctc, 0.1, nullptr, rng);
    if (strategy_has_lid(s)) {
      audit_phase(fx, m, Phase::Lid, 0.1, nullptr, rng);
      audit_phase(fx, m, Phase::Joint, 0.1, nullptr, rng);
      audit_phase(fx, m, Phase::Joint, 0.0, nullptr, rng);
    }
  }
}

TEST(JointModel, GradientAuditWithMaskAndFeedForwardEncoder) {
  Fixture fx;
  std::mt19937_64 rng(8);
  JointModel m(fx.config(Strategy::JointFromScratch, EncoderKind::FeedForwardContext), fx.corpus.vocab, fx.stats, 2);
  m.params() += 0.1 * testing::random_vector(rng, m.params().size());
  SpecAugmentMask mask;
  mask.time_spans = {{2, 3}};
  mask.freq_spans = {{1, 2}};
  audit_phase(fx, m, Phase::Joint, 0.1, &mask, rng);
}

TEST(JointModel, PhasesNeverTouchTheOtherBranch) {
  Fixture fx;
  const JointModel m = fx.model(Strategy::SeparateCtcLid);
  const Utterance& u = fx.utt(0);
  const auto normalized = m.normalize(u);
  const auto labels = derive_lid_labels(u, fx.corpus.frame_rate_hz);
  const auto ctc = m.ctc_range();
  const auto lid = m.lid_range();
  Vector g = Vector::Zero(m.params().size());
  m.loss_and_gradient(m.params(), normalized, u.transcript, labels, Phase::Ctc, 0.1, nullptr, g);
  EXPECT_TRUE(g.segment(lid.begin, lid.size()).isZero());
  EXPECT_FALSE(g.segment(ctc.begin, ctc.size()).isZero());
  g.setZero();
  m.loss_and_gradient(m.params(), normalized, u.transcript, labels, Phase::Lid, 0.1, nullptr, g);
  EXPECT_TRUE(g.segment(ctc.begin, ctc.size()).isZero());
  EXPECT_FALSE(g.segment(lid.begin, lid.size()).isZero());
}

TEST(JointModel, JointAtLambdaZeroWithZeroLidHeadEqualsCtcOnly) {
  Fixture fx;
  JointModel m = fx.model(Strategy::JointFromScratch);
  const auto lid = m.lid_range();
  m.params().segment(lid.begin, lid.size()).setZero();
  for (int i = 0; i < 6; ++i) {
    const Utterance& u = fx.utt(i);
    const auto normalized = m.normalize(u);
    const auto labels = derive_lid_labels(u, fx.corpus.frame_rate_hz);
    Vector g = Vector::Zero(m.params().size());
    const double joint =
        m.loss_and_gradient(m.params(), normalized, u.transcript, labels, Phase::Joint, 0.0, nullptr, g).loss;
    const double ctc =
        m.loss_and_gradient(m.params(), normalized, u.transcript, labels, Phase::Ctc, 0.0, nullptr, g).loss;
    EXPECT_NEAR(joint, ctc, 1e-9);
  }
}

TEST(JointModel, DecodeFusionRules) {
  Fixture fx;
  const JointModel m = fx.model(Strategy::SeparateThenJointFT);
  const ModelOutputs out = m.forward(m.normalize(fx.utt(0)));
  EXPECT_TRUE(m.decode_log_probs(out, DecodeFusion::None) == log_softmax_rows(out.z));
  EXPECT_TRUE(m.decode_log_probs(out, DecodeFusion::Logit) == fuse_logits(out.z, out.u, m.token_types()));
  const Matrix mult = multiply_fuse(softmax_rows(out.z), softmax_rows(out.u), m.token_types()).probs;
  EXPECT_LT((m.decode_log_probs(out, DecodeFusion::Multiply).array().exp().matrix() - mult).cwiseAbs().maxCoeff(),
            1e-15);
}

TEST(JointModel, MaskOnlyAffectsTraining) {
  Fixture fx;
  const JointModel m = fx.model(Strategy::SslCtc);
  const auto normalized = m.normalize(fx.utt(0));
  SpecAugmentMask mask;
  mask.time_spans = {{0, 2}};
  JointModel::Cache cache;
  const auto masked = m.forward(m.params(), normalized, &mask, cache);
  const auto clean = m.forward(normalized);
  EXPECT_FALSE(masked.z == clean.z);
  EXPECT_TRUE(cache.ctc.input.topRows(2).isZero());
}

TEST(Checkpoint, JsonRoundTripIsExact) {
  Fixture fx;
  std::mt19937_64 rng(9);
  for (Strategy s : kAll) {
    JointModel m = fx.model(s);
    m.params() += testing::random_vector(rng, m.params().size(), 1e-3);
    const std::string text = m.to_json();
    const JointModel back = JointModel::from_json(text);
    EXPECT_TRUE(back.params() == m.params());
    EXPECT_EQ(back.to_json(), text);
    EXPECT_EQ(back.config().strategy, s);
    EXPECT_TRUE(back.vocab() == m.vocab());
    const auto normalized = m.normalize(fx.utt(2));
    EXPECT_TRUE(back.forward(normalized).z == m.forward(normalized).z);
  }
}

TEST(Checkpoint, SaveLoadFile) {
  Fixture fx;
  const JointModel m = fx.model(Strategy::SeparateThenJointFT);
  const auto path = std::filesystem::temp_directory_path() / "cslid_test_model_ckpt.json";
  m.save(path);
  EXPECT_EQ(JointModel::load(path).to_json(), m.to_json());
  EXPECT_THROW(JointModel::load(path.string() + ".missing"), ValidationError);
}

TEST(Checkpoint, CorruptionRejected) {
  Fixture fx;
  const JointModel m = fx.model(Strategy::JointFromScratch);
  auto j = nlohmann::json::parse(m.to_json());
  auto bad_hash = j;
  bad_hash["vocab_hash"] = "0000000000000000";
  EXPECT_THROW(JointModel::from_json(bad_hash.dump()), ValidationError);
  auto bad_values = j;
  bad_values["segments"][0]["values"].erase(0);
  EXPECT_THROW(JointModel::from_json(bad_values.dump()), ValidationError);
  auto bad_format = j;
  bad_format["format"] = "other/9";
  EXPECT_THROW(JointModel::from_json(bad_format.dump()), ValidationError);
  EXPECT_THROW(JointModel::from_json("{not json"), ValidationError);
}

}  // namespace
}  // namespace cslid
