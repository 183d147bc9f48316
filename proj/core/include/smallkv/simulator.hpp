// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smallkv/compensation.hpp"
#include "smallkv/kvstore.hpp"
#include "smallkv/scenario.hpp"
#include "smallkv/toy_model.hpp"

namespace smallkv {

struct PrefillMetrics {
  std::size_t context_len = 0;
  bool deferred = false;
  double match_similarity = 0.0;  // mean over LLM heads, 0 while deferred
  std::uint64_t hot_bytes = 0;
  std::uint64_t full_bytes = 0;
};

struct StepMetrics {
  std::size_t step = 0;  // 1-based
  std::size_t context_len = 0;
  int token = 0;
  double mse = 0.0;      // compressed vs. shadow head outputs, mean over heads and dims
  double jaccard = 1.0;  // critical set vs. the one chosen from full LLM scores, mean over heads
  std::uint64_t hot_bytes = 0;      // store's running accounting
  std::uint64_t counted_bytes = 0;  // recomputed from the raw entry table
  std::uint64_t budget_bytes = 0;   // tau * full cache + slack
  std::uint64_t full_bytes = 0;
  bool deferred = false;
};

/// Live state of one sequence: the SLM, an uncompressed shadow of the LLM,
/// and the LLM whose cache lives in a TieredKVStore.
struct SimState {
  const ToyModel* llm = nullptr;
  const ToyModel* slm = nullptr;
  SimOptions options;

  ToyRunner slm_runner;
  ToyRunner shadow;
  TieredKVStore store;

  std::vector<ScoreVector> slm_scores;     // per SLM head, full history
  std::vector<ScoreVector> global_scores;  // per LLM head, from the shadow
  std::vector<ScoreVector> view_scores;    // per LLM head, as seen through the compressed cache
  std::vector<std::vector<bool>> alive;    // per LLM head, tokens never evicted so far

  // Attention rows kept while matching is pending.
  std::vector<std::vector<std::vector<double>>> slm_rows;
  std::vector<std::vector<std::vector<double>>> llm_rows;

  std::optional<HeadMap> head_map;
  bool deferred = true;
  std::vector<RetainDecision> decisions;  // per LLM head
  std::vector<int> tokens;
  int pending_token = 0;  // greedy choice of the last forward
  std::size_t steps_done = 0;
  std::vector<Migration> migrations;
  PrefillMetrics prefill_metrics;

  SimState(const ToyModel& llm_model, const ToyModel& slm_model, SimOptions opts);
};

/// Forwards the prompt through both models, fills the store, matches heads
/// and applies the first eviction unless the prompt is too short to match.
SimState prefill(const ToyModel& llm, const ToyModel& slm, std::span<const int> prompt,
                 const SimOptions& options);

/// One decode step. Feeds `forced` if given, otherwise the previous greedy
/// token.
StepMetrics decode_step(SimState& state, std::optional<int> forced = std::nullopt);

struct SimReport {
  Scenario scenario;
  PrefillMetrics prefill;
  std::vector<StepMetrics> steps;
  std::vector<Migration> migrations;  // filled when options.log_migrations

  double mean_mse() const noexcept;
  double final_jaccard() const noexcept;
  std::uint64_t peak_hot_bytes() const noexcept;

  std::string steps_csv() const;
  std::string migrations_csv() const;
  std::string summary_json() const;
  std::string summary_line() const;
};

/// Builds the planted pair and workload of `scenario` and runs prefill plus
/// every decode step.
SimReport run(const Scenario& scenario);

/// Seeds of the pieces of a scenario.
std::uint64_t llm_seed(std::uint64_t scenario_seed);
std::uint64_t planted_seed(std::uint64_t scenario_seed);
std::uint64_t workload_seed(std::uint64_t scenario_seed);

}  // namespace smallkv
