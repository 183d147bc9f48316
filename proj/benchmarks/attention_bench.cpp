// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "smallkv/attention.hpp"
#include "smallkv/matching.hpp"
#include "smallkv/random.hpp"

namespace {

smallkv::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  smallkv::Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  smallkv::Matrix m(rows, cols);
  for (double& x : m.data()) x = normal(rng);
  return m;
}

void BM_CausalAttention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto q = random_matrix(n, 64, 1);
  const auto k = random_matrix(n, 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(smallkv::causal_attention(q, k, 64));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_CausalAttention)->RangeMultiplier(2)->Range(64, 512)->Complexity();

void BM_AttentionRow(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto q = random_matrix(1, 64, 3);
  const auto k = random_matrix(n, 64, 4);
  for (auto _ : state) benchmark::DoNotOptimize(smallkv::attention_row(q.row(0), k.data(), 64));
}
BENCHMARK(BM_AttentionRow)->RangeMultiplier(4)->Range(256, 16384);

void BM_MatchHeads(benchmark::State& state) {
  const auto heads = static_cast<std::size_t>(state.range(0));
  smallkv::Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto make = [&](std::size_t count) {
    std::vector<smallkv::HeadScores> out;
    for (std::size_t h = 0; h < count; ++h) {
      std::vector<double> s(200);
      for (double& x : s) x = u(rng);
      out.push_back({{h / 8, h % 8}, smallkv::ScoreVector(std::move(s))});
    }
    return out;
  };
  const auto llm = make(heads);
  const auto slm = make(heads / 4);
  for (auto _ : state) benchmark::DoNotOptimize(smallkv::match_heads(llm, slm, 40));
}
BENCHMARK(BM_MatchHeads)->Arg(32)->Arg(128)->Arg(512);

}  // namespace
