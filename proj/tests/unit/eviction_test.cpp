// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "smallkv/errors.hpp"
#include "smallkv/eviction.hpp"
#include "smallkv/random.hpp"
#include "smallkv/workload.hpp"

namespace smallkv {
namespace {

using testing::Rng;

ScoreVector sv(std::vector<double> v) { return ScoreVector(std::move(v)); }

TEST(AllocateBudget, TenFiveTenPercentAtTwentyPercent) {
  const auto plan = allocate_budget(0.2, 1000);
  EXPECT_EQ(plan.n_critical, 100u);
  EXPECT_EQ(plan.n_recent, 50u);
  EXPECT_EQ(plan.n_marginal, 100u);
  EXPECT_EQ(plan.n_evicted, 750u);
  EXPECT_DOUBLE_EQ(plan.cost(), 200.0);
}

TEST(AllocateBudget, FullBudgetEvictsNothing) {
  for (std::size_t n : {1u, 7u, 100u, 1001u}) {
    for (auto ratio : {kSmallKvRatio, kEvictionOnlyRatio}) {
      const auto plan = allocate_budget(1.0, n, ratio);
      EXPECT_EQ(plan.n_evicted, 0u);
      EXPECT_EQ(plan.n_marginal, 0u) << "every token should keep K at tau=1";
    }
  }
}

TEST(AllocateBudget, FloorDegradesToCriticalOnly) {
  const auto plan = allocate_budget(0.05, 1000, kSmallKvRatio, 0.05);
  EXPECT_EQ(plan.n_critical, 50u);
  EXPECT_EQ(plan.n_recent, 0u);
  EXPECT_EQ(plan.n_marginal, 0u);
}

TEST(AllocateBudget, Errors) {
  EXPECT_THROW(allocate_budget(0.0, 100), BudgetError);
  EXPECT_THROW(allocate_budget(-0.1, 100), BudgetError);
  EXPECT_THROW(allocate_budget(1.5, 100), BudgetError);
  EXPECT_THROW(allocate_budget(std::nan(""), 100), BudgetError);
  EXPECT_THROW(allocate_budget(0.01, 10), BudgetError);
  EXPECT_THROW(allocate_budget(0.2, 100, BudgetRatio{0.0, 1.0, 1.0}), ConfigError);
}

TEST(AllocateBudget, PlanInvariantsHoldEverywhere) {
  Rng rng(1);
  std::uniform_real_distribution<double> tau_dist(0.02, 1.0);
  std::uniform_int_distribution<std::size_t> n_dist(1, 5000);
  std::uniform_real_distribution<double> share(0.0, 3.0);
  int checked = 0;
  for (int trial = 0; trial < 5000; ++trial) {
    const double tau = tau_dist(rng);
    const std::size_t n = n_dist(rng);
    const BudgetRatio ratio{0.1 + share(rng), share(rng), share(rng)};
    BudgetPlan plan;
    try {
      plan = allocate_budget(tau, n, ratio);
    } catch (const BudgetError&) {
      ASSERT_LT(tau * static_cast<double>(n), 2.0);
      continue;
    }
    ++checked;
    ASSERT_EQ(plan.n_critical + plan.n_recent + plan.n_marginal + plan.n_evicted, n);
    ASSERT_LE(plan.cost(), tau * static_cast<double>(n) + 1.0);
    ASSERT_GE(plan.n_critical, 1u);
    // Less than one whole token of budget is wasted, unless nothing is evicted.
    if (plan.n_evicted > 0) ASSERT_GT(plan.cost() + 1.0, tau * static_cast<double>(n));
  }
  EXPECT_GT(checked, 4000);
}

TEST(AllocateBudget, CostNeverDecreasesWithBudget) {
  for (std::size_t n : {50u, 333u, 1000u}) {
    double previous = 0.0;
    for (int i = 1; i <= 100; ++i) {
      const double tau = i / 100.0;
      BudgetPlan plan;
      try {
        plan = allocate_budget(tau, n);
      } catch (const BudgetError&) {
        continue;
      }
      ASSERT_GE(plan.cost(), previous);
      previous = plan.cost();
    }
  }
}

TEST(Evict, DirectRanking) {
  const BudgetPlan plan{0.5, 1, 1, 1, 1, 4};
  const auto d = evict(sv({0.5, 0.1, 0.3, 0.1}), plan);
  EXPECT_EQ(d.critical, IndexSet({0}));
  EXPECT_EQ(d.recent, IndexSet({3}));
  EXPECT_EQ(d.marginal, IndexSet({2}));
  EXPECT_EQ(d.evicted, IndexSet({1}));
}

TEST(Evict, AllCritical) {
  const BudgetPlan plan{1.0, 5, 0, 0, 0, 5};
  const auto d = evict(sv({1, 2, 3, 4, 5}), plan);
  EXPECT_EQ(d.critical, IndexSet::range(0, 5));
  EXPECT_TRUE(d.evicted.empty());
}

TEST(Evict, LengthMismatchIsDimensionError) {
  const BudgetPlan plan{0.5, 1, 1, 0, 2, 4};
  EXPECT_THROW(evict(sv({1, 2, 3}), plan), DimensionError);
}

TEST(Evict, MatchesRankAndPartitionOracle) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t n = 128;
    const auto scores = testing::random_scores(rng, n);
    const double tau = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    const auto plan = allocate_budget(tau, n);
    const auto d = evict(sv(scores), plan);
    d.check_partition();
    const auto oracle = testing::naive_evict(scores, plan.n_critical, plan.n_recent, plan.n_marginal);
    ASSERT_EQ(testing::as_set(d.critical), oracle.critical);
    ASSERT_EQ(testing::as_set(d.recent), oracle.recent);
    ASSERT_EQ(testing::as_set(d.marginal), oracle.marginal);
    ASSERT_EQ(testing::as_set(d.evicted), oracle.evicted);
  }
}

TEST(Evict, ScaleInvariantAndTierOrdered) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(50 + seed);
    const auto scores = testing::random_scores(rng, 90, 1000);
    auto scaled = scores;
    for (double& x : scaled) x *= 7.0;
    const auto plan = allocate_budget(0.3, 90);
    const auto d = evict(sv(scores), plan);
    ASSERT_EQ(d, evict(sv(scaled), plan));
    for (auto c : d.critical) {
      for (auto m : d.marginal) ASSERT_GE(scores[c], scores[m]);
      for (auto e : d.evicted) ASSERT_GE(scores[c], scores[e]);
    }
    for (auto m : d.marginal) {
      for (auto e : d.evicted) ASSERT_GE(scores[m], scores[e]);
    }
  }
}

TEST(EvictAmong, IneligibleTokensStayEvicted) {
  const BudgetPlan plan{0.5, 2, 1, 0, 2, 5};
  const std::vector<bool> eligible{false, true, true, true, true};
  const auto d = evict_among(sv({9, 1, 2, 3, 0}), plan, eligible);
  EXPECT_TRUE(d.evicted.contains(0));
  EXPECT_EQ(d.critical, IndexSet({2, 3}));
  EXPECT_EQ(d.recent, IndexSet({4}));
  d.check_partition();
}

TEST(RetainDecision, CheckPartitionRejectsOverlapAndGaps) {
  RetainDecision d{IndexSet({0, 1}), IndexSet({1}), {}, {}, 2};
  EXPECT_THROW(d.check_partition(), InvariantError);
  RetainDecision gap{IndexSet({0}), {}, {}, {}, 2};
  EXPECT_THROW(gap.check_partition(), InvariantError);
}

TEST(GlobalOracle, IsTopKOfFullScores) {
  Rng rng(7);
  const auto scores = testing::random_scores(rng, 64);
  EXPECT_EQ(testing::as_set(global_oracle_retain(sv(scores), 10)), testing::sort_topk(scores, 10));
}

TEST(GlobalOracle, ReplayingShiftingStreamMatchesSortedSums) {
  SaliencyStreamSpec spec;
  spec.seed = 3;
  spec.prompt_len = 60;
  spec.decode_len = 40;
  spec.topic_size = 4;
  spec.flip_steps = {10, 25};
  const auto stream = gen_saliency_stream(spec);
  std::vector<double> sums(stream.rows.rows.size(), 0.0);
  ScoreVector acc;
  for (const auto& row : stream.rows.rows) {
    acc.accumulate(row);
    for (std::size_t v = 0; v < row.size(); ++v) sums[v] += row[v];
  }
  EXPECT_EQ(testing::as_set(global_oracle_retain(acc, 12)), testing::sort_topk(sums, 12));
}

TEST(SmallkvRetain, PerfectProxyEqualsGlobalOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto scores = sv(testing::random_scores(rng, 100, 1000));
    const BudgetPlan plan{0.3, 20, 0, 0, 80, 100};
    const auto d = smallkv_retain(scores, plan);
    ASSERT_EQ(d.critical, global_oracle_retain(scores, 20));
  }
}

TEST(SmallkvRetain, ZeroMarginalIsTwoWaySplit) {
  Rng rng(2);
  const auto scores = sv(testing::random_scores(rng, 50));
  const auto d = smallkv_retain(scores, allocate_budget(0.2, 50, kEvictionOnlyRatio));
  EXPECT_TRUE(d.marginal.empty());
  EXPECT_EQ(d.critical.size() + d.recent.size() + d.evicted.size(), 50u);
}

AttentionStream static_stream(std::size_t prompt, std::size_t decode, std::size_t hot) {
  AttentionStream s;
  s.prompt_len = prompt;
  for (std::size_t u = 0; u < prompt + decode; ++u) {
    std::vector<double> row(u + 1, 0.0);
    const std::size_t targets = std::min(hot, u + 1);
    for (std::size_t v = 0; v < targets; ++v) row[v] = 1.0 / static_cast<double>(targets);
    s.rows.push_back(std::move(row));
  }
  return s;
}

TEST(RealDrop, StaticImportanceKeepsJaccardOne) {
  const auto stream = static_stream(100, 50, 5);
  const auto traj = real_drop_simulate(stream, 0.2);
  ASSERT_FALSE(traj.checkpoints.empty());
  for (double j : traj.jaccard_series()) EXPECT_DOUBLE_EQ(j, 1.0);
}

TEST(RealDrop, NoFlipStreamStaysAtOne) {
  SaliencyStreamSpec spec;
  spec.seed = 11;
  spec.flip_steps = {};
  spec.n_topics = 1;
  const auto stream = gen_saliency_stream(spec);
  const auto traj = real_drop_simulate(stream.rows, 0.1);
  EXPECT_DOUBLE_EQ(traj.jaccard_series().back(), 1.0);
}

TEST(RealDrop, ImportanceFlipLowersFinalJaccard) {
  SaliencyStreamSpec spec;
  spec.seed = 5;
  spec.n_topics = 2;
  spec.flip_steps = {100};
  const auto stream = gen_saliency_stream(spec);
  const auto traj = real_drop_simulate(stream.rows, 0.1);
  EXPECT_LT(traj.jaccard_series().back(), 0.9);
  const auto assisted = assisted_simulate(stream.rows, stream.rows, 0.1);
  EXPECT_EQ(assisted.checkpoints.size(), traj.checkpoints.size());
  EXPECT_GT(assisted.jaccard_series().back(), traj.jaccard_series().back());
}

TEST(RealDrop, ImportantSetSizeComesFromFirstPlan) {
  const auto stream = static_stream(200, 10, 3);
  const auto traj = real_drop_simulate(stream, 0.2);
  EXPECT_EQ(traj.important_k, allocate_budget(0.2, 200, kEvictionOnlyRatio).n_critical);
  for (const auto& c : traj.checkpoints) {
    ASSERT_EQ(c.method_set.size(), traj.important_k);
    ASSERT_EQ(c.global_set.size(), traj.important_k);
    ASSERT_DOUBLE_EQ(c.jaccard, jaccard(c.method_set, c.global_set));
  }
}

TEST(RealDrop, ShapeErrors) {
  auto stream = static_stream(10, 5, 2);
  EXPECT_THROW(real_drop_simulate(stream, 0.5, 0), ConfigError);
  auto other = static_stream(10, 4, 2);
  EXPECT_THROW(assisted_simulate(stream, other, 0.5), DimensionError);
  stream.rows[3].push_back(0.0);
  EXPECT_THROW(real_drop_simulate(stream, 0.5), DimensionError);
}

TEST(PyramidBudget, TwoLayers) {
  EXPECT_NEAR(pyramid_budget(0, 2, 0.2), 0.2667, 1e-4);
  EXPECT_NEAR(pyramid_budget(1, 2, 0.2), 0.1333, 1e-4);
}

TEST(PyramidBudget, NoDecayIsUniformAndMeanIsBase) {
  for (std::size_t l = 0; l < 5; ++l) EXPECT_DOUBLE_EQ(pyramid_budget(l, 5, 0.3, 1.0), 0.3);
  for (std::size_t layers : {2u, 3u, 7u, 28u}) {
    double sum = 0.0;
    for (std::size_t l = 0; l < layers; ++l) {
      const double b = pyramid_budget(l, layers, 0.2);
      if (l > 0) EXPECT_LT(b, pyramid_budget(l - 1, layers, 0.2));
      sum += b;
    }
    EXPECT_NEAR(sum / static_cast<double>(layers), 0.2, 1e-12);
  }
  EXPECT_THROW(pyramid_budget(2, 2, 0.2), RangeError);
}

}  // namespace
}  // namespace smallkv
