// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <sstream>

#include "smallkv/errors.hpp"
#include "smallkv/scenario.hpp"
#include "smallkv/simulator.hpp"

namespace smallkv {
namespace {

Scenario short_scenario(std::uint64_t seed) {
  Scenario s;
  s.seed = seed;
  s.workload.decode_len = 24;
  s.workload.flip_steps = {12};
  return s;
}

TEST(Simulator, FullBudgetIsLossless) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto s = short_scenario(seed);
    s.options.tau = 1.0;
    for (const char* ablation : {"none", "no-marginal", "no-saliency", "no-both"}) {
      s.options.flags = parse_ablation(ablation);
      const auto report = run(s);
      for (const auto& step : report.steps) {
        ASSERT_EQ(step.mse, 0.0) << ablation << " step " << step.step;
        ASSERT_EQ(step.hot_bytes, step.full_bytes);
      }
    }
  }
}

TEST(Simulator, DeterministicInSeed) {
  const auto a = run(short_scenario(4));
  const auto b = run(short_scenario(4));
  EXPECT_EQ(a.steps_csv(), b.steps_csv());
  EXPECT_NE(a.steps_csv(), run(short_scenario(5)).steps_csv());
}

TEST(Simulator, HotBytesStayWithinBudgetAndMatchTable) {
  for (double tau : {0.1, 0.2, 0.5}) {
    auto s = short_scenario(1);
    s.options.tau = tau;
    const auto report = run(s);
    EXPECT_LT(report.prefill.hot_bytes, report.prefill.full_bytes);
    for (const auto& step : report.steps) {
      ASSERT_FALSE(step.deferred);
      ASSERT_EQ(step.hot_bytes, step.counted_bytes);
      ASSERT_LE(step.hot_bytes, step.budget_bytes) << "tau " << tau << " step " << step.step;
      ASSERT_GE(step.jaccard, 0.0);
      ASSERT_LE(step.jaccard, 1.0);
      ASSERT_GE(step.mse, 0.0);
    }
  }
}

TEST(Simulator, ShortPromptDefersMatchingAndEviction) {
  auto s = short_scenario(2);
  s.workload.prompt_len = 60;
  s.workload.decode_len = 50;
  s.workload.flip_steps = {45};
  const auto report = run(s);
  EXPECT_TRUE(report.prefill.deferred);
  EXPECT_EQ(report.prefill.hot_bytes, report.prefill.full_bytes);
  for (const auto& step : report.steps) {
    if (step.context_len < 100) {
      ASSERT_TRUE(step.deferred);
      ASSERT_EQ(step.hot_bytes, step.full_bytes);
      ASSERT_EQ(step.mse, 0.0);
    } else {
      ASSERT_FALSE(step.deferred);
      ASSERT_LE(step.hot_bytes, step.budget_bytes);
    }
  }
}

TEST(Simulator, NoMarginalKeepsNoValueOnlyEntries) {
  const ToyModel llm = ToyModel::generate({});
  const auto pair = gen_planted_pair(llm, 2, 4, 0.01, 3);
  FlipWorkloadSpec wl;
  wl.decode_len = 10;
  wl.flip_steps = {5};
  const auto w = gen_flip_workload(wl);
  SimOptions options;
  options.flags.disable_marginal = true;
  auto state = prefill(pair.llm, pair.slm, w.prompt, options);
  for (int t : w.continuation) {
    decode_step(state, t);
    ASSERT_EQ(state.store.count(EntryKind::v_only), 0u);
  }
  options.flags = {};
  auto with_marginal = prefill(pair.llm, pair.slm, w.prompt, options);
  EXPECT_GT(with_marginal.store.count(EntryKind::v_only), 0u);
}

TEST(Simulator, StaticEvictionNeverRestoresValues) {
  auto s = short_scenario(3);
  s.options.flags.disable_saliency = true;
  s.options.log_migrations = true;
  const auto report = run(s);
  ASSERT_FALSE(report.migrations.empty());
  for (const auto& m : report.migrations) {
    ASSERT_FALSE(m.half == CacheHalf::value && m.to == Tier::hot);
  }
  s.options.flags = {};
  bool restored = false;
  for (const auto& m : run(s).migrations) {
    restored = restored || (m.half == CacheHalf::value && m.to == Tier::hot);
  }
  EXPECT_TRUE(restored);
}

TEST(Simulator, ReportsSerialize) {
  auto s = short_scenario(6);
  s.options.log_migrations = true;
  const auto report = run(s);
  const auto csv = report.steps_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 25);
  EXPECT_EQ(csv.rfind("step,context_len,", 0), 0u);
  const auto summary = nlohmann::json::parse(report.summary_json());
  EXPECT_EQ(summary["decode_steps"], 24);
  EXPECT_EQ(summary["ablation"], "none");
  EXPECT_DOUBLE_EQ(summary["mean_mse"].get<double>(), report.mean_mse());
  EXPECT_EQ(report.summary_line().rfind("mean_mse=", 0), 0u);
  EXPECT_EQ(report.migrations_csv().rfind("layer,kv_head,token_pos,half,from,to\n", 0), 0u);
}

TEST(Simulator, InvalidOptions) {
  auto s = short_scenario(0);
  s.options.tau = 1.5;
  EXPECT_THROW(run(s), BudgetError);
  s.options.tau = 0.2;
  s.options.compress_every = 0;
  EXPECT_THROW(run(s), ConfigError);
  const ToyModel llm = ToyModel::generate({});
  EXPECT_THROW(prefill(llm, llm, {}, SimOptions{}), ConfigError);
}

TEST(Scenario, JsonRoundTrip) {
  Scenario s;
  s.name = "round";
  s.seed = 99;
  s.options.tau = 0.35;
  s.options.flags = parse_ablation("no-both");
  s.workload.flip_steps = {3, 9};
  s.budgets = {0.5, 0.25};
  const auto back = Scenario::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.options.flags, s.options.flags);
}

TEST(Scenario, RejectsUnknownKeysAndBadAblation) {
  EXPECT_THROW(Scenario::from_json(R"({"sed": 1})"), ParseError);
  EXPECT_THROW(Scenario::from_json(R"({"llm": {"layer": 2}})"), ParseError);
  EXPECT_THROW(Scenario::from_json("not json"), ParseError);
  EXPECT_THROW(parse_ablation("w/o"), ConfigError);
  EXPECT_EQ(ablation_name(parse_ablation("no-saliency")), "no-saliency");
}

TEST(Scenario, ShippedScenariosLoad) {
  for (const auto& entry : std::filesystem::directory_iterator(SMALLKV_SCENARIO_DIR)) {
    if (entry.path().extension() != ".json") continue;
    SCOPED_TRACE(entry.path().string());
    const auto s = Scenario::load(entry.path().string());
    EXPECT_NO_THROW(s.options.validate());
    EXPECT_NO_THROW(s.workload.validate());
    EXPECT_NO_THROW(s.stream.validate());
  }
}

}  // namespace
}  // namespace smallkv
