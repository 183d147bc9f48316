// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "smallkv/attention.hpp"
#include "smallkv/matching.hpp"

namespace smallkv {

/// Relative token counts for critical : recent : marginal. Marginal tokens keep
/// only V, so each costs half a token of budget.
struct BudgetRatio {
  double critical = 2.0;
  double recent = 1.0;
  double marginal = 2.0;
};

inline constexpr BudgetRatio kSmallKvRatio{2.0, 1.0, 2.0};
/// Plain score-based eviction (no V-only tier).
inline constexpr BudgetRatio kEvictionOnlyRatio{2.0, 1.0, 0.0};

inline constexpr double kDefaultCriticalFloor = 0.05;

/// Per-step token counts for each tier. Invariants (checked by allocate_budget):
/// the four counts sum to context_len and
/// n_critical + n_recent + n_marginal / 2 <= tau * context_len + 1.
struct BudgetPlan {
  double tau = 1.0;
  std::size_t n_critical = 0;
  std::size_t n_recent = 0;
  std::size_t n_marginal = 0;
  std::size_t n_evicted = 0;
  std::size_t context_len = 0;

  /// Budget consumed, in full-token units.
  double cost() const noexcept {
    return static_cast<double>(n_critical + n_recent) + 0.5 * static_cast<double>(n_marginal);
  }

  friend bool operator==(const BudgetPlan&, const BudgetPlan&) = default;
};

/// Splits budget fraction `tau` of an n-token context by `ratio`.
///
/// When the critical share falls below `critical_floor` * n, recent and
/// marginal shares are shrunk proportionally and handed to critical until the
/// floor is met or they run out. When the budget covers more tokens than
/// exist, spare budget upgrades marginal tokens to full KV, so tau = 1 keeps
/// everything. Throws BudgetError for tau outside (0, 1] or when no critical
/// token fits.
BudgetPlan allocate_budget(double tau, std::size_t n, BudgetRatio ratio = kSmallKvRatio,
                           double critical_floor = kDefaultCriticalFloor);

/// Partition of [0, n) into the four tiers.
struct RetainDecision {
  IndexSet critical;
  IndexSet recent;
  IndexSet marginal;
  IndexSet evicted;
  std::size_t context_len = 0;

  /// critical ∪ recent: positions whose K and V stay resident.
  IndexSet full_kv() const { return set_union(critical, recent); }

  /// Throws InvariantError unless the four sets partition [0, context_len).
  void check_partition() const;

  friend bool operator==(const RetainDecision&, const RetainDecision&) = default;
};

/// Retains the top-scored tokens: the newest n_recent positions are always
/// kept, n_critical best among the rest keep full KV, the next n_marginal
/// keep V only, everything else is evicted.
RetainDecision evict(const ScoreVector& scores, const BudgetPlan& plan);

/// evict() restricted to `eligible` positions; ineligible ones (already
/// dropped) always land in the evicted set.
RetainDecision evict_among(const ScoreVector& scores, const BudgetPlan& plan,
                           const std::vector<bool>& eligible);

/// TopK over scores accumulated on the uncompressed history.
IndexSet global_oracle_retain(const ScoreVector& full_scores, std::size_t k);

/// Eviction for an LLM head driven by its matched SLM head's full-history
/// scores. The SLM never evicts, so tokens dropped earlier can come back.
RetainDecision smallkv_retain(const ScoreVector& slm_scores, const BudgetPlan& plan);

/// Causal attention rows of a prefill followed by decode steps: rows[u] has
/// length u + 1, the first prompt_len rows belong to the prompt.
struct AttentionStream {
  std::size_t prompt_len = 0;
  std::vector<std::vector<double>> rows;

  std::size_t decode_len() const noexcept { return rows.size() - prompt_len; }
};

struct SaliencyCheckpoint {
  std::size_t step = 0;  // decode step (1-based)
  IndexSet method_set;  // important set seen by the replayed policy
  IndexSet global_set;
  double jaccard = 1.0;
};

struct SaliencyTrajectory {
  double tau = 1.0;
  std::size_t important_k = 0;  // TopK size compared at every checkpoint
  std::vector<SaliencyCheckpoint> checkpoints;

  std::vector<double> jaccard_series() const;
};

/// Replays `stream` under continual eviction (evicted tokens never return)
/// and compares its important-token set with the uncompressed global view.
///
/// The first compression happens right after the prompt; the important-set
/// size is fixed to that plan's n_critical. Every `compress_every` decode
/// steps the two TopK sets are compared and eviction runs again. Rows are
/// renormalized over surviving tokens, as a softmax over the compressed cache
/// would be.
SaliencyTrajectory real_drop_simulate(const AttentionStream& stream, double tau,
                                      std::size_t compress_every = 1,
                                      BudgetRatio ratio = kEvictionOnlyRatio,
                                      double critical_floor = kDefaultCriticalFloor);

/// Same checkpoints as real_drop_simulate, but the important set is ranked
/// by `assistant`'s full, never-compressed history, the way smallkv_retain
/// ranks it. `assistant` must have the same shape as `stream`.
SaliencyTrajectory assisted_simulate(const AttentionStream& stream,
                                     const AttentionStream& assistant, double tau,
                                     std::size_t compress_every = 1,
                                     BudgetRatio ratio = kEvictionOnlyRatio,
                                     double critical_floor = kDefaultCriticalFloor);

/// Per-layer budget decaying linearly from tau_base (layer 0) to
/// decay * tau_base (last layer), rescaled so the layer mean is tau_base.
double pyramid_budget(std::size_t layer, std::size_t total_layers, double tau_base,
                      double decay = 0.5);

}  // namespace smallkv
