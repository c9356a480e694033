#include <benchmark/benchmark.h>

#include <random>

#include "cslid/ctc.hpp"
#include "cslid/parallel.hpp"
#include "cslid/trainer.hpp"

namespace cslid {
namespace {

struct CtcBatch {
  std::vector<Matrix> log_probs;
  std::vector<std::vector<int>> targets;
};

const CtcBatch& ctc_batch() {
  static const CtcBatch batch = [] {
    CtcBatch b;
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 2.0);
    std::uniform_int_distribution<int> token(1, 20);
    for (int i = 0; i < 64; ++i) {
      Matrix z(200, 21);
      for (Eigen::Index k = 0; k < z.size(); ++k) z.data()[k] = n(rng);
      b.log_probs.push_back(log_softmax_rows(z));
      std::vector<int> target(30);
      for (int& t : target) t = token(rng);
      b.targets.push_back(std::move(target));
    }
    return b;
  }();
  return batch;
}

void BM_CtcBatchSerial(benchmark::State& state) {
  const auto& b = ctc_batch();
  for (auto _ : state) benchmark::DoNotOptimize(ctc_loss_batch_serial(b.log_probs, b.targets));
}
BENCHMARK(BM_CtcBatchSerial)->Unit(benchmark::kMillisecond);

void BM_CtcBatchParallel(benchmark::State& state) {
  const auto& b = ctc_batch();
  const int workers = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(ctc_loss_batch(b.log_probs, b.targets, workers));
}
BENCHMARK(BM_CtcBatchParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

struct EvalFixture {
  Corpus corpus;
  JointModel model;
};

const EvalFixture& eval_fixture() {
  static const EvalFixture f = [] {
    GeneratorConfig g;
    g.utterances = 120;
    Corpus corpus = generate_synthetic_corpus(g);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.ft_epochs = 1;
    JointModel model = train(cfg, corpus).model;
    return EvalFixture{std::move(corpus), std::move(model)};
  }();
  return f;
}

void BM_EvaluateSerial(benchmark::State& state) {
  const auto& f = eval_fixture();
  const auto utts = f.corpus.split(Split::Train);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_serial(f.model, f.corpus, utts));
}
BENCHMARK(BM_EvaluateSerial)->Unit(benchmark::kMillisecond);

void BM_EvaluateParallel(benchmark::State& state) {
  const auto& f = eval_fixture();
  const auto utts = f.corpus.split(Split::Train);
  const int workers = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(f.model, f.corpus, utts, workers));
}
BENCHMARK(BM_EvaluateParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace cslid

BENCHMARK_MAIN();
