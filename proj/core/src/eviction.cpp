// SPDX-License-Identifier: Apache-2.0
#include "smallkv/eviction.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "smallkv/errors.hpp"

namespace smallkv {
namespace {

// Absorbs representation error such as 0.1 * 0.5 * 1000 = 49.999...
constexpr double kCountSlack = 1e-9;

std::size_t floor_count(double x) {
  return x <= 0.0 ? 0 : static_cast<std::size_t>(std::floor(x + kCountSlack));
}

}  // namespace

BudgetPlan allocate_budget(double tau, std::size_t n, BudgetRatio ratio, double critical_floor) {
  if (!(tau > 0.0 && tau <= 1.0)) {
    throw BudgetError("budget must be in (0,1]");
  }
  if (ratio.critical <= 0.0 || ratio.recent < 0.0 || ratio.marginal < 0.0) {
    throw ConfigError("budget ratio needs a positive critical share and non-negative others");
  }

  // Shares below are in budget (cost) units: a marginal token costs 1/2.
  const double weight = ratio.critical + ratio.recent + 0.5 * ratio.marginal;
  double cost_c = tau * ratio.critical / weight;
  double cost_r = tau * ratio.recent / weight;
  double cost_m = tau * 0.5 * ratio.marginal / weight;

  if (cost_c + kCountSlack < critical_floor) {
    const double deficit = critical_floor - cost_c;
    const double available = cost_r + cost_m;
    if (available > 0.0) {
      const double take = std::min(1.0, deficit / available);
      cost_c += take * available;
      cost_r *= 1.0 - take;
      cost_m *= 1.0 - take;
    }
  }

  const double nd = static_cast<double>(n);
  std::size_t n_c = floor_count(cost_c * nd);
  std::size_t n_r = std::min(n, floor_count(cost_r * nd));
  std::size_t n_m = 2 * floor_count(cost_m * nd);

  const double allowance = tau * nd;
  if (n_c + n_r + n_m > n) {
    // More budget than tokens: spend the surplus on upgrading V-only to full KV.
    const std::size_t full = std::min(n, floor_count(2.0 * allowance - nd));
    n_r = std::min(n_r, full);
    n_c = full - n_r;
    n_m = n - full;
  } else {
    // Whole tokens lost to rounding go to the critical tier.
    const auto spent = [&] {
      return static_cast<double>(n_c + n_r) + 0.5 * static_cast<double>(n_m);
    };
    n_c += std::min(n - n_c - n_r - n_m, floor_count(allowance - spent()));
    // Half-token leftovers upgrade V-only tokens to full KV.
    const std::size_t upgrade = std::min(n_m, floor_count(2.0 * (allowance - spent())));
    n_c += upgrade;
    n_m -= upgrade;
  }
  if (n_c == 0) {
    throw BudgetError("budget too small: no critical token fits (tau=" + std::to_string(tau) +
                      ", n=" + std::to_string(n) + ")");
  }

  BudgetPlan plan{tau, n_c, n_r, n_m, n - n_c - n_r - n_m, n};
  if (plan.cost() > allowance + kCountSlack) {
    throw InvariantError("budget plan exceeds its allocation");
  }
  return plan;
}

void RetainDecision::check_partition() const {
  std::vector<int> seen(context_len, 0);
  for (const IndexSet* set : {&critical, &recent, &marginal, &evicted}) {
    for (std::size_t pos : *set) {
      if (pos >= context_len) {
        throw InvariantError("decision position " + std::to_string(pos) + " out of range");
      }
      if (++seen[pos] > 1) {
        throw InvariantError("decision assigns position " + std::to_string(pos) +
                             " to more than one tier");
      }
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw InvariantError("decision does not cover every position");
  }
}

RetainDecision evict_among(const ScoreVector& scores, const BudgetPlan& plan,
                           const std::vector<bool>& eligible) {
  const std::size_t n = plan.context_len;
  if (scores.size() != n || eligible.size() != n) {
    throw DimensionError("evict: plan covers " + std::to_string(n) + " tokens but scores have " +
                         std::to_string(scores.size()));
  }

  std::vector<std::size_t> live;
  std::vector<std::size_t> dropped;
  for (std::size_t pos = 0; pos < n; ++pos) {
    (eligible[pos] ? live : dropped).push_back(pos);
  }

  const std::size_t n_recent = std::min(plan.n_recent, live.size());
  std::vector<std::size_t> recent(live.end() - static_cast<std::ptrdiff_t>(n_recent), live.end());
  live.resize(live.size() - n_recent);

  const auto ranked = rank_positions(scores, live);
  const std::size_t n_crit = std::min(plan.n_critical, ranked.size());
  const std::size_t n_marg = std::min(plan.n_marginal, ranked.size() - n_crit);

  const auto first = ranked.begin();
  std::vector<std::size_t> critical(first, first + static_cast<std::ptrdiff_t>(n_crit));
  std::vector<std::size_t> marginal(first + static_cast<std::ptrdiff_t>(n_crit),
                                    first + static_cast<std::ptrdiff_t>(n_crit + n_marg));
  std::vector<std::size_t> evicted(first + static_cast<std::ptrdiff_t>(n_crit + n_marg),
                                   ranked.end());
  evicted.insert(evicted.end(), dropped.begin(), dropped.end());

  return RetainDecision{IndexSet(std::move(critical)), IndexSet(std::move(recent)),
                        IndexSet(std::move(marginal)), IndexSet(std::move(evicted)), n};
}

RetainDecision evict(const ScoreVector& scores, const BudgetPlan& plan) {
  return evict_among(scores, plan, std::vector<bool>(plan.context_len, true));
}

IndexSet global_oracle_retain(const ScoreVector& full_scores, std::size_t k) {
  return topk_indices(full_scores, k);
}

RetainDecision smallkv_retain(const ScoreVector& slm_scores, const BudgetPlan& plan) {
  return evict(slm_scores, plan);
}

std::vector<double> SaliencyTrajectory::jaccard_series() const {
  std::vector<double> out;
  out.reserve(checkpoints.size());
  for (const auto& c : checkpoints) out.push_back(c.jaccard);
  return out;
}

SaliencyTrajectory real_drop_simulate(const AttentionStream& stream, double tau,
                                      std::size_t compress_every, BudgetRatio ratio,
                                      double critical_floor) {
  if (compress_every == 0) {
    throw ConfigError("compress_every must be positive");
  }
  if (stream.prompt_len == 0 || stream.rows.size() < stream.prompt_len) {
    throw DimensionError("attention stream needs a non-empty prompt");
  }
  for (std::size_t u = 0; u < stream.rows.size(); ++u) {
    if (stream.rows[u].size() != u + 1) {
      throw DimensionError("attention stream row " + std::to_string(u) + " has length " +
                           std::to_string(stream.rows[u].size()));
    }
  }

  ScoreVector global;
  for (std::size_t u = 0; u < stream.prompt_len; ++u) global.accumulate(stream.rows[u]);
  std::vector<double> dropped_view(global.values().begin(), global.values().end());
  std::vector<bool> alive(stream.prompt_len, true);

  const auto compress = [&](std::size_t n) {
    const BudgetPlan plan = allocate_budget(tau, n, ratio, critical_floor);
    const auto decision = evict_among(ScoreVector(dropped_view), plan, alive);
    for (std::size_t pos : decision.evicted) alive[pos] = false;
    return plan;
  };

  SaliencyTrajectory traj;
  traj.tau = tau;
  traj.important_k = compress(stream.prompt_len).n_critical;

  for (std::size_t step = 1; step <= stream.decode_len(); ++step) {
    const auto& row = stream.rows[stream.prompt_len + step - 1];
    const std::size_t n = row.size();
    global.accumulate(row);

    alive.push_back(true);
    dropped_view.push_back(0.0);
    double mass = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      if (alive[v]) mass += row[v];
    }
    if (mass > 0.0) {
      for (std::size_t v = 0; v < n; ++v) {
        if (alive[v]) dropped_view[v] += row[v] / mass;
      }
    }

    if (step % compress_every != 0) continue;

    std::vector<std::size_t> live;
    for (std::size_t v = 0; v < n; ++v) {
      if (alive[v]) live.push_back(v);
    }
    const ScoreVector view(dropped_view);
    auto ranked = rank_positions(view, live);
    ranked.resize(std::min(ranked.size(), traj.important_k));

    SaliencyCheckpoint cp;
    cp.step = step;
    cp.method_set = IndexSet(std::move(ranked));
    cp.global_set = global_oracle_retain(global, traj.important_k);
    cp.jaccard = jaccard(cp.method_set, cp.global_set);
    traj.checkpoints.push_back(std::move(cp));

    compress(n);
  }
  return traj;
}

SaliencyTrajectory assisted_simulate(const AttentionStream& stream,
                                     const AttentionStream& assistant, double tau,
                                     std::size_t compress_every, BudgetRatio ratio,
                                     double critical_floor) {
  if (compress_every == 0) {
    throw ConfigError("compress_every must be positive");
  }
  if (stream.prompt_len == 0 || stream.rows.size() < stream.prompt_len) {
    throw DimensionError("attention stream needs a non-empty prompt");
  }
  if (assistant.prompt_len != stream.prompt_len || assistant.rows.size() != stream.rows.size()) {
    throw DimensionError("assistant stream shape differs from the target stream");
  }
  for (std::size_t u = 0; u < stream.rows.size(); ++u) {
    if (stream.rows[u].size() != u + 1 || assistant.rows[u].size() != u + 1) {
      throw DimensionError("attention stream row " + std::to_string(u) + " has the wrong length");
    }
  }

  ScoreVector global;
  ScoreVector guide;
  for (std::size_t u = 0; u < stream.prompt_len; ++u) {
    global.accumulate(stream.rows[u]);
    guide.accumulate(assistant.rows[u]);
  }

  SaliencyTrajectory traj;
  traj.tau = tau;
  traj.important_k = allocate_budget(tau, stream.prompt_len, ratio, critical_floor).n_critical;

  for (std::size_t step = 1; step <= stream.decode_len(); ++step) {
    const std::size_t u = stream.prompt_len + step - 1;
    global.accumulate(stream.rows[u]);
    guide.accumulate(assistant.rows[u]);
    if (step % compress_every != 0) continue;

    SaliencyCheckpoint cp;
    cp.step = step;
    cp.method_set = topk_indices(guide, traj.important_k);
    cp.global_set = global_oracle_retain(global, traj.important_k);
    cp.jaccard = jaccard(cp.method_set, cp.global_set);
    traj.checkpoints.push_back(std::move(cp));
  }
  return traj;
}

double pyramid_budget(std::size_t layer, std::size_t total_layers, double tau_base,
                      double decay) {
  if (total_layers == 0 || layer >= total_layers) {
    throw RangeError("pyramid_budget: layer " + std::to_string(layer) + " outside [0, " +
                     std::to_string(total_layers) + ")");
  }
  if (total_layers == 1) return tau_base;
  const double depth = static_cast<double>(layer) / static_cast<double>(total_layers - 1);
  const double raw = tau_base * (1.0 - (1.0 - decay) * depth);
  const double mean = tau_base * (1.0 + decay) / 2.0;
  return raw * tau_base / mean;
}

}  // namespace smallkv
