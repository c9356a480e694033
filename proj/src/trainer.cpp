#include "cslid/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <random>

#include "json.hpp"

#include "cslid/ctc.hpp"
#include "cslid/parallel.hpp"

namespace cslid {

using nlohmann::json;

namespace {

struct Example {
  const Utterance* utt = nullptr;
  std::size_t corpus_index = 0;
  std::vector<Matrix> normalized;
  LidLabelSeq labels;
};

std::vector<Example> make_examples(const JointModel& model, const Corpus& corpus,
                                   const std::vector<const Utterance*>& utts) {
  std::vector<Example> out;
  out.reserve(utts.size());
  for (const auto* utt : utts) {
    Example ex;
    ex.utt = utt;
    ex.corpus_index = static_cast<std::size_t>(utt - corpus.utterances.data());
    ex.normalized = model.normalize(*utt);
    ex.labels = derive_lid_labels(*utt, corpus.frame_rate_hz);
    out.push_back(std::move(ex));
  }
  return out;
}

struct DecodedUtterance {
  std::vector<int> hyp;
  LidAccuracy lid;
  int fallback_frames = 0;
};

DecodedUtterance decode_example(const JointModel& model, const Example& ex, DecodeFusion fusion) {
  DecodedUtterance d;
  const ModelOutputs out = model.forward(ex.normalized);
  if (model.has_ctc()) {
    d.hyp = greedy_decode(model.decode_log_probs(out, fusion, &d.fallback_frames), Vocabulary::kBlank);
  }
  if (model.has_lid()) d.lid = frame_accuracy(out.u, ex.labels);
  return d;
}

Evaluation reduce_decoded(const JointModel& model, const std::vector<Example>& examples,
                          const std::vector<DecodedUtterance>& decoded) {
  Evaluation eval;
  LidAccuracy lid;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (model.has_ctc()) accumulate_ter(eval.report, examples[i].utt->transcript, decoded[i].hyp, model.vocab());
    lid += decoded[i].lid;
    eval.fallback_frames += decoded[i].fallback_frames;
  }
  if (model.has_lid()) eval.lid = lid;
  return eval;
}

Evaluation evaluate_examples(const JointModel& model, const std::vector<Example>& examples, DecodeFusion fusion,
                             int workers) {
  std::vector<DecodedUtterance> decoded(examples.size());
  parallel_for(examples.size(), workers, [&](std::size_t i) { decoded[i] = decode_example(model, examples[i], fusion); });
  return reduce_decoded(model, examples, decoded);
}

void check_vocab(const JointModel& model, const Corpus& corpus) {
  if (model.vocab().hash() != corpus.vocab.hash()) {
    throw ValidationError("model vocabulary (hash " + model.vocab().hash() + ") does not match corpus vocabulary (hash " +
                          corpus.vocab.hash() + ")");
  }
}

enum class Selection { Ter, LidAccuracy };

struct PhaseSpec {
  Phase phase;
  JointModel::Range range;
  double lr;
  int epochs;
  Selection selection;
  DecodeFusion fusion;
  // Let the parameters entering the phase compete in model selection.
  bool start_is_candidate = false;
};

class Runner {
 public:
  Runner(const TrainConfig& cfg, const Corpus& corpus, JointModel& model, std::vector<Example> train,
         std::vector<Example> val, std::string strategy_name)
      : cfg_(cfg),
        model_(model),
        train_(std::move(train)),
        val_(std::move(val)),
        strategy_(std::move(strategy_name)) {
    (void)corpus;
  }

  void run(const PhaseSpec& spec) {
    JointModel::Range range = spec.range;
    OptimizerState opt(range.size(), AdamConfig{spec.lr});
    Vector best = model_.params();
    double best_score = kInf;
    if (spec.start_is_candidate) best_score = validation(spec).score;

    for (int e = 0; e < spec.epochs; ++e) {
      ++epoch_;
      const auto started = std::chrono::steady_clock::now();
      const Vector last_good = model_.params();

      std::vector<std::size_t> order(train_.size());
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 shuffle_rng(derive_seed(cfg_.seed, epoch_, 0x5eed));
      std::shuffle(order.begin(), order.end(), shuffle_rng);

      double loss_sum = 0.0;
      int counted = 0;
      int skipped = 0;
      const std::size_t batch = static_cast<std::size_t>(std::max(1, cfg_.batch_size));
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t n = std::min(batch, order.size() - start);
        std::vector<Vector> grads(n);
        std::vector<UtteranceLoss> losses(n);
        parallel_for(n, cfg_.workers, [&](std::size_t i) {
          const Example& ex = train_[order[start + i]];
          grads[i] = Vector::Zero(model_.params().size());
          std::optional<SpecAugmentMask> mask;
          if (cfg_.spec_augment && cfg_.augment.enabled()) {
            std::mt19937_64 rng(derive_seed(cfg_.seed ^ cfg_.augment.seed, epoch_, ex.corpus_index + 1));
            mask = draw_spec_augment_mask(ex.utt->frames(), ex.utt->dim(), cfg_.augment, rng);
          }
          losses[i] = model_.loss_and_gradient(model_.params(), ex.normalized, ex.utt->transcript, ex.labels,
                                                spec.phase, cfg_.lambda, mask ? &*mask : nullptr, grads[i]);
        });

        // Ordered reduction keeps the result independent of the worker count.
        Vector sum = Vector::Zero(model_.params().size());
        int used = 0;
        for (std::size_t i = 0; i < n; ++i) {
          if (!losses[i].feasible) {
            ++skipped;
            continue;
          }
          if (!std::isfinite(losses[i].loss)) diverge("non-finite loss", last_good);
          sum += grads[i];
          loss_sum += losses[i].loss;
          ++used;
        }
        if (used == 0) continue;
        counted += used;
        sum /= static_cast<double>(used);

        if (spec.phase == Phase::Ctc && model_.lid_range().size() > 0) {
          const auto r = model_.lid_range();
          isolation_.lid_grad_during_ctc_phase =
              std::max(isolation_.lid_grad_during_ctc_phase, sum.segment(r.begin, r.size()).cwiseAbs().maxCoeff());
        }
        if (spec.phase == Phase::Lid && model_.ctc_range().size() > 0) {
          const auto r = model_.ctc_range();
          isolation_.ctc_grad_during_lid_phase =
              std::max(isolation_.ctc_grad_during_lid_phase, sum.segment(r.begin, r.size()).cwiseAbs().maxCoeff());
        }

        try {
          adam_step(opt, model_.params().segment(range.begin, range.size()), sum.segment(range.begin, range.size()));
        } catch (const Error& err) {
          diverge(err.what(), last_good);
        }
      }

      const auto v = validation(spec);
      EpochLog entry;
      entry.epoch = epoch_;
      entry.strategy = strategy_;
      entry.phase = std::string(to_string(spec.phase));
      entry.train_loss = counted > 0 ? loss_sum / counted : 0.0;
      entry.val_ter = v.ter;
      entry.lid_acc = v.lid_acc;
      entry.skipped = skipped;
      if (cfg_.record_wall_time) {
        entry.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started)
                            .count();
      }
      log_.push_back(entry);

      // Ties go to the later epoch.
      if (v.score <= best_score) {
        best_score = v.score;
        best = model_.params();
      }
    }
    model_.params() = best;
  }

  std::vector<EpochLog> take_log() { return std::move(log_); }
  GradientIsolation isolation() const { return isolation_; }

 private:
  struct Validation {
    double score = 0.0;
    std::optional<double> ter;
    std::optional<double> lid_acc;
  };

  Validation validation(const PhaseSpec& spec) const {
    Validation v;
    if (val_.empty()) return v;
    const Evaluation eval =
        evaluate_examples(model_, val_, model_.has_ctc() ? spec.fusion : DecodeFusion::None, cfg_.workers);
    if (model_.has_ctc()) v.ter = eval.report.all.ter();
    if (eval.lid) v.lid_acc = eval.lid->accuracy();
    // A constant score makes the last epoch win.
    if (cfg_.selection == ModelSelection::LastEpoch) return v;
    if (spec.selection == Selection::Ter) {
      v.score = v.ter.value_or(0.0);
    } else {
      v.score = -v.lid_acc.value_or(0.0);
    }
    return v;
  }

  [[noreturn]] void diverge(const std::string& why, const Vector& last_good) {
    JointModel snapshot = model_;
    snapshot.params() = last_good;
    throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch_) + ": " + why, std::move(snapshot));
  }

  const TrainConfig& cfg_;
  JointModel& model_;
  std::vector<Example> train_;
  std::vector<Example> val_;
  std::string strategy_;
  int epoch_ = 0;
  std::vector<EpochLog> log_;
  GradientIsolation isolation_;
};

std::vector<const Utterance*> training_utterances(const TrainConfig& cfg, const Corpus& corpus) {
  if (cfg.train_ids.empty()) return corpus.split(Split::Train);
  std::vector<const Utterance*> out;
  for (const auto& id : cfg.train_ids) {
    const Utterance* utt = corpus.find(id);
    if (!utt) throw ValidationError("unknown training utterance '" + id + "'");
    out.push_back(utt);
  }
  return out;
}

}  // namespace

std::string EpochLog::to_json_line() const {
  json j = {{"epoch", epoch},
            {"strategy", strategy},
            {"phase", phase},
            {"train_loss", train_loss},
            {"val_ter", val_ter ? json(*val_ter) : json(nullptr)},
            {"lid_acc", lid_acc ? json(*lid_acc) : json(nullptr)},
            {"wall_ms", wall_ms},
            {"skipped", skipped}};
  return j.dump();
}

std::string training_log_jsonl(const std::vector<EpochLog>& log) {
  std::string out;
  for (const auto& e : log) out += e.to_json_line() + "\n";
  return out;
}

TrainResult train(const TrainConfig& cfg, const Corpus& corpus) {
  CSLID_CHECK(cfg.lambda >= 0.0 && cfg.lambda <= 1.0, "lambda must lie in [0, 1]");
  CSLID_CHECK(cfg.epochs >= 1, "epochs must be >= 1");
  CSLID_CHECK(cfg.ft_epochs >= 0, "fine-tuning epochs must be >= 0");
  CSLID_CHECK(cfg.batch_size >= 1, "batch size must be >= 1");
  CSLID_CHECK(cfg.learning_rate > 0.0, "learning rate must be positive");
  CSLID_CHECK(cfg.feature_layer >= 0 && cfg.feature_layer < corpus.layer_count, "feature layer out of range");

  const auto train_utts = training_utterances(cfg, corpus);
  CSLID_CHECK(!train_utts.empty(), "training split is empty");

  ModelConfig mc;
  mc.strategy = cfg.strategy;
  mc.has_ctc = true;
  mc.has_lid = strategy_has_lid(cfg.strategy);
  mc.weighted_features = strategy_uses_layer_stack(cfg.strategy);
  mc.feature_layer = cfg.feature_layer;
  mc.layer_count = corpus.layer_count;
  mc.feature_dim = corpus.feature_dim;
  mc.ctc_encoder = cfg.ctc_encoder;
  mc.lid_head = LidHeadKind::Recurrent;
  mc.lid_encoder = cfg.lid_encoder;

  JointModel model(mc, corpus.vocab, fit_norm_stats(train_utts), cfg.seed);
  auto train_examples = make_examples(model, corpus, train_utts);
  auto val_examples = make_examples(model, corpus, corpus.split(Split::Val));
  Runner runner(cfg, corpus, model, std::move(train_examples), std::move(val_examples),
                std::string(to_string(cfg.strategy)));

  const JointModel::Range all{0, model.params().size()};
  const double lr = cfg.learning_rate;
  switch (cfg.strategy) {
    case Strategy::BaselineCtc:
    case Strategy::SslCtc:
      runner.run({Phase::Ctc, model.ctc_range(), lr, cfg.epochs, Selection::Ter, DecodeFusion::None});
      break;
    case Strategy::BaselineCtcLid:
      runner.run({Phase::Joint, all, lr, cfg.epochs, Selection::Ter, DecodeFusion::Logit});
      break;
    case Strategy::JointFromScratch:
      // Same number of CTC updates as separate training followed by fine-tuning.
      runner.run({Phase::Joint, all, lr, cfg.epochs + cfg.ft_epochs, Selection::Ter, DecodeFusion::Logit});
      break;
    case Strategy::SeparateCtcLid:
    case Strategy::SeparateThenJointFT:
      runner.run({Phase::Ctc, model.ctc_range(), lr, cfg.epochs, Selection::Ter, DecodeFusion::None});
      runner.run({Phase::Lid, model.lid_range(), lr, cfg.epochs, Selection::LidAccuracy, DecodeFusion::Multiply});
      if (cfg.strategy == Strategy::SeparateThenJointFT && cfg.ft_epochs > 0) {
        runner.run({Phase::Joint, all, lr * cfg.ft_lr_scale, cfg.ft_epochs, Selection::Ter, DecodeFusion::Logit,
                    /*start_is_candidate=*/true});
      }
      break;
  }
  return TrainResult{std::move(model), runner.take_log(), runner.isolation()};
}

Evaluation evaluate(const JointModel& model, const Corpus& corpus, Split split, int workers) {
  return evaluate(model, corpus, corpus.split(split), workers);
}

Evaluation evaluate(const JointModel& model, const Corpus& corpus, const std::vector<const Utterance*>& utts,
                    int workers) {
  check_vocab(model, corpus);
  CSLID_CHECK(model.has_ctc(), "evaluation needs a model with a CTC branch");
  const auto examples = make_examples(model, corpus, utts);
  Evaluation eval = evaluate_examples(model, examples, model.decode_fusion(), workers);
  CSLID_CHECK(eval.report.all.ref_tokens > 0, "token error rate needs at least one reference token");
  return eval;
}

Evaluation evaluate_serial(const JointModel& model, const Corpus& corpus, const std::vector<const Utterance*>& utts) {
  check_vocab(model, corpus);
  CSLID_CHECK(model.has_ctc(), "evaluation needs a model with a CTC branch");
  const auto examples = make_examples(model, corpus, utts);
  std::vector<DecodedUtterance> decoded(examples.size());
  serial_for(examples.size(), [&](std::size_t i) { decoded[i] = decode_example(model, examples[i], model.decode_fusion()); });
  Evaluation eval = reduce_decoded(model, examples, decoded);
  CSLID_CHECK(eval.report.all.ref_tokens > 0, "token error rate needs at least one reference token");
  return eval;
}

std::string evaluation_json(const Evaluation& eval, const std::string& split, const std::string& strategy) {
  auto counts = [](const ErrorCounts& c) {
    const auto t = c.ter();
    return json{{"ter", t ? json(*t) : json(nullptr)},
                {"sub", c.sub},
                {"del", c.del},
                {"ins", c.ins},
                {"ref_tokens", c.ref_tokens}};
  };
  json j = {{"split", split},
            {"strategy", strategy},
            {"utterances", eval.report.utterances},
            {"all", counts(eval.report.all)},
            {"lang_a", counts(eval.report.lang_a)},
            {"lang_b", counts(eval.report.lang_b)},
            {"insertion_attribution", "hypothesis token language"},
            {"multiply_fusion_fallback_frames", eval.fallback_frames}};
  if (eval.lid) {
    json confusion = json::array();
    for (const auto& row : eval.lid->confusion) confusion.push_back(std::vector<long>(row.begin(), row.end()));
    auto recall = [&](LanguageTag c) {
      const double r = eval.lid->recall(c);
      return std::isnan(r) ? json(nullptr) : json(r);
    };
    j["lid"] = {{"frame_accuracy", eval.lid->accuracy()},
                {"frames", eval.lid->total},
                {"confusion", confusion},
                {"recall", {{"Silence", recall(LanguageTag::Silence)},
                            {"LangA", recall(LanguageTag::LangA)},
                            {"LangB", recall(LanguageTag::LangB)}}}};
  }
  return j.dump(1) + "\n";
}

std::string export_posteriors(const JointModel& model, const Corpus& corpus, const std::string& id, int top_k) {
  check_vocab(model, corpus);
  CSLID_CHECK(model.has_ctc(), "posterior export needs a CTC branch");
  CSLID_CHECK(top_k >= 1, "top-k must be >= 1");
  const Utterance* utt = corpus.find(id);
  if (!utt) throw ValidationError("unknown utterance '" + id + "'");
  const ModelOutputs out = model.forward(model.normalize(*utt));
  const Matrix probs = model.decode_log_probs(out, model.decode_fusion()).array().exp();
  const int k = std::min(top_k, model.vocab().size());

  std::string csv = "frame";
  for (int i = 1; i <= k; ++i) csv += ",top" + std::to_string(i) + "_token,top" + std::to_string(i) + "_prob";
  Matrix lid_probs;
  if (model.has_lid()) {
    csv += ",lid_silence,lid_lang_a,lid_lang_b";
    lid_probs = softmax_rows(out.u);
  }
  csv += "\n";

  char buf[64];
  std::vector<int> order(model.vocab().size());
  for (Eigen::Index t = 0; t < probs.rows(); ++t) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs(t, a) > probs(t, b); });
    csv += std::to_string(t);
    for (int i = 0; i < k; ++i) {
      std::snprintf(buf, sizeof(buf), ",%s,%.17g", model.vocab().token(order[i]).c_str(), probs(t, order[i]));
      csv += buf;
    }
    if (model.has_lid()) {
      for (int c = 0; c < kNumLidClasses; ++c) {
        std::snprintf(buf, sizeof(buf), ",%.17g", lid_probs(t, c));
        csv += buf;
      }
    }
    csv += "\n";
  }
  return csv;
}

ProbeResult probe_lid(const ProbeConfig& cfg, const Corpus& corpus) {
  CSLID_CHECK(cfg.epochs >= 1 && cfg.batch_size >= 1, "probe epochs and batch size must be >= 1");
  const auto train_utts = corpus.split(Split::Train);
  CSLID_CHECK(!train_utts.empty(), "training split is empty");

  ModelConfig mc;
  mc.strategy = Strategy::SeparateCtcLid;
  mc.has_ctc = false;
  mc.has_lid = true;
  mc.weighted_features = true;
  mc.layer_count = corpus.layer_count;
  mc.feature_dim = corpus.feature_dim;
  mc.lid_head = cfg.head;
  mc.lid_encoder = cfg.recurrent;
  JointModel model(mc, corpus.vocab, fit_norm_stats(train_utts), cfg.seed);

  TrainConfig tc;
  tc.seed = cfg.seed;
  tc.batch_size = cfg.batch_size;
  tc.workers = cfg.workers;
  tc.spec_augment = false;
  Runner runner(tc, corpus, model, make_examples(model, corpus, train_utts),
                make_examples(model, corpus, corpus.split(Split::Val)), "probe-" + std::string(to_string(cfg.head)));
  runner.run({Phase::Lid, model.lid_range(), cfg.learning_rate, cfg.epochs, Selection::LidAccuracy,
              DecodeFusion::None});

  ProbeResult result{std::move(model), {}};
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    const auto utts = corpus.split(s);
    if (utts.empty()) continue;
    const auto examples = make_examples(result.model, corpus, utts);
    const Evaluation eval = evaluate_examples(result.model, examples, DecodeFusion::None, cfg.workers);
    result.rows.push_back({std::string(to_string(cfg.head)), std::string(to_string(s)), eval.lid->accuracy()});
  }
  return result;
}

}  // namespace cslid
