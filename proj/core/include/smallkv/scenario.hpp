// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "smallkv/eviction.hpp"
#include "smallkv/matching.hpp"
#include "smallkv/toy_model.hpp"
#include "smallkv/workload.hpp"

namespace smallkv {

struct AblationFlags {
  bool disable_marginal = false;
  bool disable_saliency = false;
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

/// "none", "no-marginal", "no-saliency" or "no-both".
std::string ablation_name(AblationFlags flags);
AblationFlags parse_ablation(const std::string& name);

struct SimOptions {
  double tau = 0.2;
  BudgetRatio ratio = kSmallKvRatio;
  double critical_floor = kDefaultCriticalFloor;
  std::size_t compress_every = 1;
  std::size_t match_min = kMatchWindowMin;
  std::size_t match_max = kMatchWindowMax;
  std::size_t match_topk = 0;  // 0 picks default_match_topk(window)
  AblationFlags flags;
  bool log_migrations = false;

  void validate() const;
};

/// Everything one simulation needs. Stored as a JSON document; every field is
/// optional and unknown keys are rejected.
struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 0;
  ToyModelSpec llm;
  std::size_t slm_layers = 2;
  std::size_t slm_heads = 4;
  double noise_sigma = 0.01;
  SimOptions options;
  FlipWorkloadSpec workload;
  bool forced = true;  // feed the workload continuation instead of greedy tokens

  // Inputs of the saliency sweep.
  SaliencyStreamSpec stream;
  double stream_noise = 0.1;
  std::vector<double> budgets{0.3, 0.2, 0.1, 0.05};

  static Scenario from_json(const std::string& text);
  static Scenario load(const std::string& path);
  std::string to_json() const;
};

}  // namespace smallkv
