#include "cslid/parallel.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <stdexcept>
#include <vector>

#include "cslid/ctc.hpp"
#include "test_util.hpp"

namespace cslid {
namespace {

TEST(ParallelFor, VisitsEveryIndexOnce) {
  for (int workers : {1, 2, 4}) {
    std::vector<int> hits(1000, 0);
    parallel_for(hits.size(), workers, [&](std::size_t i) { hits[i] += 1; });
    EXPECT_EQ(std::accumulate(hits.begin(), hits.end(), 0), 1000);
    EXPECT_EQ(*std::min_element(hits.begin(), hits.end()), 1);
  }
}

TEST(ParallelFor, RethrowsOnCaller) {
  EXPECT_THROW(parallel_for(64, 4,
                            [](std::size_t i) {
                              if (i == 17) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}

TEST(ParallelFor, EmptyRangeIsNoop) {
  int calls = 0;
  parallel_for(0, 4, [&](std::size_t) { ++calls; });
  EXPECT_EQ(calls, 0);
}

TEST(ParallelFor, BatchCtcMatchesSerialBitForBit) {
  std::mt19937_64 rng(9);
  std::vector<Matrix> lps;
  std::vector<std::vector<int>> targets;
  for (int i = 0; i < 40; ++i) {
    const int t = testing::uniform_int(rng, 1, 30);
    lps.push_back(log_softmax_rows(testing::random_matrix(rng, t, 6, 2.0)));
    std::vector<int> target(testing::uniform_int(rng, 0, 8));
    for (int& k : target) k = testing::uniform_int(rng, 1, 5);
    targets.push_back(target);
  }
  const auto serial = ctc_loss_batch_serial(lps, targets);
  for (int workers : {1, 3, 8}) {
    const auto par = ctc_loss_batch(lps, targets, workers);
    ASSERT_EQ(par.size(), serial.size());
    for (std::size_t i = 0; i < par.size(); ++i) {
      EXPECT_EQ(par[i].feasible, serial[i].feasible);
      if (serial[i].feasible) {
        EXPECT_EQ(par[i].loss, serial[i].loss);
      } else {
        EXPECT_TRUE(std::isinf(par[i].loss));
      }
      EXPECT_TRUE(par[i].grad_logits == serial[i].grad_logits);
    }
  }
}

}  // namespace
}  // namespace cslid
