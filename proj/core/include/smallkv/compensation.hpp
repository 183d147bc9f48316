// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "smallkv/eviction.hpp"
#include "smallkv/matrix.hpp"

namespace smallkv {

struct SparseWeight {
  std::size_t pos = 0;
  double weight = 0.0;

  friend bool operator==(const SparseWeight&, const SparseWeight&) = default;
};

/// Spliced attention row: LLM weights on positions with resident K
/// (critical ∪ recent), matched-SLM weights on marginal positions, zero
/// elsewhere. No renormalization, so the total may differ from 1.
struct CompensatedRow {
  std::vector<SparseWeight> critical_part;
  std::vector<SparseWeight> marginal_part;
  std::size_t context_len = 0;

  double total_mass() const noexcept;
  std::vector<double> dense() const;
};

/// Throws InvariantError when `decision` is not a partition and
/// DimensionError on length mismatches.
CompensatedRow build_compensated_row(std::span<const double> llm_row,
                                     std::span<const double> slm_row,
                                     const RetainDecision& decision);

/// Returns the resident V row of a position or throws CacheMissError.
using ValueLookup = std::function<std::span<const double>(std::size_t pos)>;

/// O_c (critical part) and O_m (marginal part), computed independently.
struct OutputParts {
  std::vector<double> critical;
  std::vector<double> marginal;

  std::vector<double> sum() const;
};

OutputParts compensated_output_parts(const CompensatedRow& row, std::size_t head_dim,
                                     const ValueLookup& values);

/// O_c + O_m, reading V only at supported positions.
std::vector<double> compensated_output(const CompensatedRow& row, std::size_t head_dim,
                                       const ValueLookup& values);

/// Convenience overload over a dense value matrix (every row resident).
std::vector<double> compensated_output(const CompensatedRow& row, const Matrix& v_full);

/// sigma^2 * sum_{i in marginal} a[i]^2 * v_norm_max^2.
double error_bound(std::span<const double> a, const IndexSet& marginal, double sigma,
                   double v_norm_max);

struct BoundConfig {
  std::size_t n = 256;
  double marginal_fraction = 0.5;
  double sigma = 0.1;
  std::size_t trials = 1000;
  std::uint64_t seed = 0;
  std::size_t head_dim = 16;
  /// Where the marginal band starts in the ascending-score order, as a
  /// fraction of n. 0 is the bottom-scoring band.
  double band_offset = 0.0;
  /// Standard deviation of the logits the sampled attention rows come from.
  double logit_scale = 2.0;
};

struct BoundReport {
  double observed_mse = 0.0;  // mean ||ΔO||^2 over trials
  double bound = 0.0;         // mean analytic bound over trials
  std::size_t trials = 0;
  std::size_t violations = 0;  // trials whose own error exceeded their own bound

  bool holds() const noexcept { return observed_mse <= bound; }
};

/// Monte-Carlo check of the marginal-substitution error bound: multiplicative
/// noise e_i = sigma * a_i * z_i on the marginal band, observed ||e V||^2
/// compared against error_bound with the trial's max V row norm. Trial t
/// draws from its own seed derived from (seed, t).
BoundReport verify_bound(const BoundConfig& config);

}  // namespace smallkv
