// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "smallkv/attention.hpp"
#include "smallkv/compensation.hpp"
#include "smallkv/eviction.hpp"
#include "smallkv/kvstore.hpp"
#include "smallkv/matching.hpp"
#include "smallkv/random.hpp"
#include "smallkv/scenario.hpp"
#include "smallkv/simulator.hpp"
#include "smallkv/toy_model.hpp"
#include "smallkv/workload.hpp"

namespace smallkv::acceptance {
namespace {

// Pinned tolerances and sizes.
constexpr double kCacheRatio = 5.71;
constexpr double kCacheRatioTol = 0.01;
constexpr double kFlopsRatio = 14.9;
constexpr double kFlopsRatioTol = 0.1;
constexpr double kLosslessMse = 1e-9;
constexpr std::size_t kLosslessSeeds = 10;
constexpr std::size_t kLosslessSteps = 128;
constexpr std::size_t kOracleInstances = 1000;
constexpr std::size_t kOracleMaxN = 256;
constexpr double kOracleTol = 1e-6;
constexpr std::size_t kSaliencySeeds = 100;
constexpr double kAssistantNoise = 0.1;
constexpr std::size_t kAblationSeeds = 20;
constexpr double kPlantedNoise = 0.01;
constexpr std::size_t kBoundTrials = 1000;
constexpr std::size_t kBoundN = 256;
constexpr std::size_t kMatchSeeds = 20;
constexpr double kMatchRecovery = 0.95;
constexpr std::size_t kMatchWindowLen = 128;
constexpr std::size_t kMatchTopK = 32;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double time_limit_s;
  std::function<Outcome()> check;
};

std::string fmt(double x, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << x;
  return os.str();
}

Outcome cost_ratios() {
  const auto a = qwen2_7b();
  const auto b = qwen2_72b();
  const double bytes = static_cast<double>(kv_cache_bytes(b, 2048, 64)) /
                       static_cast<double>(kv_cache_bytes(a, 2048, 64));
  const double flops = model_flops_approx(b, 2048, 64) / model_flops_approx(a, 2048, 64);
  const bool ok = std::abs(bytes - kCacheRatio) <= kCacheRatioTol &&
                  std::abs(flops - kFlopsRatio) <= kFlopsRatioTol &&
                  kv_cache_bytes(a, 2048, 64) == 7'516'192'768ULL;
  return {ok, "kv_bytes_ratio=" + fmt(bytes) + " flops_ratio=" + fmt(flops)};
}

Outcome lossless() {
  double worst = 0.0;
  std::size_t steps = 0;
  for (std::uint64_t seed = 0; seed < kLosslessSeeds; ++seed) {
    Scenario s;
    s.seed = seed;
    s.options.tau = 1.0;
    s.workload.decode_len = kLosslessSteps;
    s.workload.flip_steps = {kLosslessSteps / 2};
    for (const auto& step : run(s).steps) {
      worst = std::max(worst, step.mse);
      ++steps;
    }
  }
  return {worst <= kLosslessMse && steps == kLosslessSeeds * kLosslessSteps,
          "steps=" + std::to_string(steps) + " max_mse=" + fmt(worst)};
}

Outcome oracle_equivalence() {
  std::size_t failures = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < kOracleInstances; ++i) {
    testing::Rng rng(derive_seed(2024, i));
    const std::size_t n = 1 + rng() % kOracleMaxN;

    const auto scores = testing::random_scores(rng, n, 1 + static_cast<int>(rng() % 50));
    const auto k = 1 + rng() % n;
    if (testing::as_set(topk_indices(ScoreVector(scores), k)) != testing::sort_topk(scores, k)) {
      ++failures;
    }

    const double draw = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const double tau = std::min(1.0, std::max(2.0 / static_cast<double>(n), draw));
    const auto plan = allocate_budget(tau, n);
    const auto d = evict(ScoreVector(scores), plan);
    const auto p = testing::naive_evict(scores, plan.n_critical, plan.n_recent, plan.n_marginal);
    if (testing::as_set(d.critical) != p.critical || testing::as_set(d.recent) != p.recent ||
        testing::as_set(d.marginal) != p.marginal || testing::as_set(d.evicted) != p.evicted) {
      ++failures;
    }

    const auto a = testing::random_attention(rng, std::min<std::size_t>(n, 64));
    const auto sums = accumulate_scores(AttentionMatrix(a));
    const auto naive = testing::naive_column_sums(a);
    for (std::size_t v = 0; v < naive.size(); ++v) worst = std::max(worst, std::abs(sums[v] - naive[v]));

    const auto llm = testing::random_row(rng, n);
    const auto slm = testing::random_row(rng, n);
    const auto dense = build_compensated_row(llm, slm, d).dense();
    const auto expected = testing::naive_compensated(llm, slm, d);
    for (std::size_t v = 0; v < n; ++v) worst = std::max(worst, std::abs(dense[v] - expected[v]));
  }
  return {failures == 0 && worst <= kOracleTol,
          "instances=" + std::to_string(kOracleInstances) + " set_mismatches=" +
              std::to_string(failures) + " max_abs_err=" + fmt(worst)};
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 1.0 : s / static_cast<double>(xs.size());
}

Outcome saliency_trend() {
  const std::vector<double> budgets{0.3, 0.2, 0.1, 0.05};
  std::vector<double> drop(budgets.size(), 0.0);
  std::vector<double> assisted(budgets.size(), 0.0);
  for (std::uint64_t seed = 0; seed < kSaliencySeeds; ++seed) {
    SaliencyStreamSpec spec;
    spec.seed = seed;
    const auto stream = gen_saliency_stream(spec);
    const auto assistant = perturb_stream(stream.rows, kAssistantNoise, derive_seed(seed, 1));
    for (std::size_t b = 0; b < budgets.size(); ++b) {
      drop[b] += mean_of(real_drop_simulate(stream.rows, budgets[b]).jaccard_series());
      assisted[b] += mean_of(assisted_simulate(stream.rows, assistant, budgets[b]).jaccard_series());
    }
  }
  bool ok = true;
  std::string detail;
  for (std::size_t b = 0; b < budgets.size(); ++b) {
    drop[b] /= kSaliencySeeds;
    assisted[b] /= kSaliencySeeds;
    if (b > 0 && !(drop[b] < drop[b - 1])) ok = false;
    if (!(assisted[b] > drop[b])) ok = false;
    detail += "tau=" + fmt(budgets[b], 2) + ":" + fmt(drop[b], 3) + "/" + fmt(assisted[b], 3) + " ";
  }
  return {ok, detail + "(real-drop/assisted)"};
}

Outcome ablation_ordering() {
  const std::vector<double> budgets{0.1, 0.2, 0.4};
  const std::vector<std::string> modes{"none", "no-marginal", "no-both"};
  bool ok = true;
  std::string detail;
  for (double tau : budgets) {
    std::vector<double> mse(modes.size(), 0.0);
    for (std::size_t m = 0; m < modes.size(); ++m) {
      for (std::uint64_t seed = 0; seed < kAblationSeeds; ++seed) {
        Scenario s;
        s.seed = seed;
        s.noise_sigma = kPlantedNoise;
        s.options.tau = tau;
        s.options.flags = parse_ablation(modes[m]);
        mse[m] += run(s).mean_mse() / kAblationSeeds;
      }
    }
    if (!(mse[0] <= mse[1] && mse[1] <= mse[2])) ok = false;
    if (tau == 0.2 && !(mse[0] < mse[1] && mse[1] < mse[2])) ok = false;
    detail += "tau=" + fmt(tau, 2) + ":" + fmt(mse[0]) + "<=" + fmt(mse[1]) + "<=" + fmt(mse[2]) + " ";
  }
  detail.pop_back();
  return {ok, detail};
}

Outcome error_bound() {
  bool ok = true;
  std::string detail;
  for (double sigma : {0.01, 0.05, 0.1}) {
    BoundConfig c;
    c.n = kBoundN;
    c.marginal_fraction = 0.5;
    c.band_offset = 0.0;
    c.sigma = sigma;
    c.trials = kBoundTrials;
    const auto r = verify_bound(c);
    ok = ok && r.holds() && r.trials == kBoundTrials;
    detail += "sigma=" + fmt(sigma, 2) + ":" + fmt(r.observed_mse, 3) + "<=" + fmt(r.bound, 3) + " ";
  }
  detail.pop_back();
  return {ok, detail};
}

std::vector<int> random_prompt(std::uint64_t seed, std::size_t n, std::size_t vocab) {
  Rng rng(seed);
  std::vector<int> tokens(n);
  for (int& t : tokens) t = static_cast<int>(rng() % vocab);
  return tokens;
}

std::vector<HeadScores> head_scores(const ToyModel& model, std::span<const int> tokens) {
  const MatchWindow window{0, tokens.size()};
  std::vector<HeadScores> out;
  for (const auto& a : forward_attention(model, tokens)) out.push_back({a.head(), window_scores(a, window)});
  return out;
}

Outcome matching_recovery() {
  std::size_t exact_runs = 0;
  std::size_t noisy_hits = 0;
  std::size_t noisy_total = 0;
  bool monotone = true;
  for (std::uint64_t seed = 0; seed < kMatchSeeds; ++seed) {
    ToyModelSpec spec;
    spec.layers = 2;
    spec.heads = 8;
    spec.seed = derive_seed(seed, 1);
    const ToyModel llm = ToyModel::generate(spec);
    const auto tokens = random_prompt(derive_seed(seed, 3), kMatchWindowLen, spec.vocab);
    const auto llm_scores = head_scores(llm, tokens);
    for (double sigma : {0.0, kPlantedNoise}) {
      const auto pair = gen_planted_pair(llm, 2, 4, sigma, derive_seed(seed, 4));
      const auto map = match_heads(llm_scores, head_scores(pair.slm, tokens), kMatchTopK);
      std::size_t hits = 0;
      for (const auto& e : pair.planted_map.entries()) hits += map.at(e.llm).slm == e.slm;
      if (sigma == 0.0) {
        exact_runs += hits == pair.planted_map.size();
      } else {
        noisy_hits += hits;
        noisy_total += pair.planted_map.size();
      }
    }

    ToyModelSpec big = spec;
    big.layers = 4;
    const ToyModel wide = ToyModel::generate(big);
    const auto wide_tokens = random_prompt(derive_seed(seed, 5), kMatchWindowLen, big.vocab);
    const auto wide_scores = head_scores(wide, wide_tokens);
    std::vector<double> previous;
    for (std::size_t layers : {1u, 2u, 4u}) {
      const auto pair = gen_planted_pair(wide, layers, 8, kPlantedNoise, derive_seed(seed, 6));
      const auto map = match_heads(wide_scores, head_scores(pair.slm, wide_tokens), kMatchTopK);
      std::vector<double> best;
      for (const auto& h : wide_scores) best.push_back(map.at(h.id).similarity);
      for (std::size_t i = 0; i < previous.size(); ++i) monotone = monotone && best[i] >= previous[i];
      previous = std::move(best);
    }
  }
  const double rate = static_cast<double>(noisy_hits) / static_cast<double>(noisy_total);
  return {exact_runs == kMatchSeeds && rate >= kMatchRecovery && monotone,
          "exact_at_zero_noise=" + std::to_string(exact_runs) + "/" + std::to_string(kMatchSeeds) +
              " recovery_at_0.01=" + fmt(rate) + " pool_8_16_32_monotone=" + (monotone ? "yes" : "no")};
}

Outcome store_conservation() {
  std::size_t steps = 0;
  std::size_t mismatches = 0;
  std::size_t over = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (double tau : {0.05, 0.1, 0.2, 0.4, 0.7}) {
      for (const char* mode : {"none", "no-marginal", "no-saliency", "no-both"}) {
        Scenario s;
        s.seed = seed;
        s.options.tau = tau;
        s.options.flags = parse_ablation(mode);
        const auto report = run(s);
        const std::uint64_t token = kv_cache_bytes(ToyModel::generate(s.llm).config(), 1, 1);
        for (const auto& step : report.steps) {
          ++steps;
          if (step.hot_bytes != step.counted_bytes) ++mismatches;
          const double limit = tau * static_cast<double>(step.full_bytes) + static_cast<double>(token);
          if (static_cast<double>(step.hot_bytes) > limit) ++over;
        }
      }
    }
  }
  return {mismatches == 0 && over == 0,
          "steps=" + std::to_string(steps) + " accounting_mismatches=" + std::to_string(mismatches) +
              " over_budget=" + std::to_string(over)};
}

}  // namespace
}  // namespace smallkv::acceptance

int main() {
  using namespace smallkv::acceptance;
  const std::vector<Criterion> criteria{
      {"cost_model_ratios", 1.0, cost_ratios},
      {"lossless_full_budget", 60.0, lossless},
      {"oracle_equivalence", 120.0, oracle_equivalence},
      {"saliency_shift_trend", 300.0, saliency_trend},
      {"ablation_ordering", 600.0, ablation_ordering},
      {"compensation_error_bound", 60.0, error_bound},
      {"matching_recovery", 120.0, matching_recovery},
      {"store_conservation_budget", 600.0, store_conservation},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.time_limit_s;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::printf("%s %s: %s time=%.2fs%s\n", pass ? "PASS" : "FAIL", c.name.c_str(),
                o.detail.c_str(), secs, in_time ? "" : " (over time limit)");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
