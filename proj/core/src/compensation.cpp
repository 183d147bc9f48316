// SPDX-License-Identifier: Apache-2.0
#include "smallkv/compensation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "smallkv/errors.hpp"
#include "smallkv/random.hpp"

namespace smallkv {

double CompensatedRow::total_mass() const noexcept {
  double sum = 0.0;
  for (const auto& e : critical_part) sum += e.weight;
  for (const auto& e : marginal_part) sum += e.weight;
  return sum;
}

std::vector<double> CompensatedRow::dense() const {
  std::vector<double> out(context_len, 0.0);
  for (const auto& e : critical_part) out[e.pos] = e.weight;
  for (const auto& e : marginal_part) out[e.pos] = e.weight;
  return out;
}

CompensatedRow build_compensated_row(std::span<const double> llm_row,
                                     std::span<const double> slm_row,
                                     const RetainDecision& decision) {
  const std::size_t n = decision.context_len;
  if (llm_row.size() != n) {
    throw DimensionError("compensated row: LLM row length " + std::to_string(llm_row.size()) +
                         " != context length " + std::to_string(n));
  }
  if (!decision.marginal.empty() && slm_row.size() != n) {
    throw DimensionError("compensated row: SLM row length " + std::to_string(slm_row.size()) +
                         " != context length " + std::to_string(n));
  }
  decision.check_partition();

  CompensatedRow row;
  row.context_len = n;
  const IndexSet full = decision.full_kv();
  row.critical_part.reserve(full.size());
  for (std::size_t pos : full) row.critical_part.push_back({pos, llm_row[pos]});
  row.marginal_part.reserve(decision.marginal.size());
  for (std::size_t pos : decision.marginal) row.marginal_part.push_back({pos, slm_row[pos]});
  return row;
}

std::vector<double> OutputParts::sum() const {
  std::vector<double> out(critical.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = critical[c] + marginal[c];
  return out;
}

namespace {

std::vector<double> weighted_sum(std::span<const SparseWeight> part, std::size_t head_dim,
                                 const ValueLookup& values) {
  std::vector<double> out(head_dim, 0.0);
  for (const auto& e : part) {
    const auto v = values(e.pos);
    if (v.size() != head_dim) {
      throw DimensionError("value row width " + std::to_string(v.size()) + " != head_dim");
    }
    if (e.weight == 0.0) continue;
    for (std::size_t c = 0; c < head_dim; ++c) out[c] += e.weight * v[c];
  }
  return out;
}

}  // namespace

OutputParts compensated_output_parts(const CompensatedRow& row, std::size_t head_dim,
                                     const ValueLookup& values) {
  return {weighted_sum(row.critical_part, head_dim, values),
          weighted_sum(row.marginal_part, head_dim, values)};
}

std::vector<double> compensated_output(const CompensatedRow& row, std::size_t head_dim,
                                       const ValueLookup& values) {
  if (row.marginal_part.empty()) {
    return weighted_sum(row.critical_part, head_dim, values);
  }
  return compensated_output_parts(row, head_dim, values).sum();
}

std::vector<double> compensated_output(const CompensatedRow& row, const Matrix& v_full) {
  if (v_full.rows() != row.context_len) {
    throw DimensionError("compensated_output: value matrix has " + std::to_string(v_full.rows()) +
                         " rows, row covers " + std::to_string(row.context_len));
  }
  return compensated_output(row, v_full.cols(),
                            [&v_full](std::size_t pos) { return v_full.row(pos); });
}

double error_bound(std::span<const double> a, const IndexSet& marginal, double sigma,
                   double v_norm_max) {
  double sq = 0.0;
  for (std::size_t pos : marginal) {
    if (pos >= a.size()) {
      throw RangeError("error_bound: marginal position " + std::to_string(pos) + " out of range");
    }
    sq += a[pos] * a[pos];
  }
  return sigma * sigma * sq * v_norm_max * v_norm_max;
}

BoundReport verify_bound(const BoundConfig& config) {
  if (config.trials == 0 || config.n == 0 || config.head_dim == 0) {
    throw ConfigError("verify_bound needs n, head_dim and trials >= 1");
  }
  if (config.marginal_fraction < 0.0 || config.band_offset < 0.0 ||
      config.marginal_fraction + config.band_offset > 1.0 + 1e-12) {
    throw ConfigError("verify_bound: marginal band must lie inside [0, 1]");
  }
  const std::size_t n = config.n;
  const std::size_t d = config.head_dim;
  const auto band = static_cast<std::size_t>(std::floor(config.marginal_fraction * n + 1e-9));
  const auto offset = static_cast<std::size_t>(std::floor(config.band_offset * n + 1e-9));

  BoundReport report;
  report.trials = config.trials;
  double err_sum = 0.0;
  double bound_sum = 0.0;

  std::vector<double> logits(n);
  std::vector<double> a(n);
  std::vector<std::size_t> ascending(n);
  Matrix v(n, d);

  for (std::size_t t = 0; t < config.trials; ++t) {
    Rng rng(derive_seed(config.seed, t));
    std::normal_distribution<double> normal(0.0, 1.0);

    for (double& x : logits) x = config.logit_scale * normal(rng);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += (a[i] = std::exp(logits[i] - mx));
    for (double& x : a) x /= z;
    for (double& x : v.data()) x = normal(rng);

    std::iota(ascending.begin(), ascending.end(), std::size_t{0});
    std::stable_sort(ascending.begin(), ascending.end(),
                     [&](std::size_t l, std::size_t r) { return a[l] < a[r]; });
    const IndexSet marginal(std::vector<std::size_t>(
        ascending.begin() + static_cast<std::ptrdiff_t>(offset),
        ascending.begin() + static_cast<std::ptrdiff_t>(offset + band)));

    double v_norm_max = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double sq = 0.0;
      for (double x : v.row(i)) sq += x * x;
      v_norm_max = std::max(v_norm_max, std::sqrt(sq));
    }

    std::vector<double> delta(d, 0.0);
    for (std::size_t pos : marginal) {
      const double e = config.sigma * a[pos] * normal(rng);
      const auto vr = v.row(pos);
      for (std::size_t c = 0; c < d; ++c) delta[c] += e * vr[c];
    }
    double err = 0.0;
    for (double x : delta) err += x * x;

    const double bound = error_bound(a, marginal, config.sigma, v_norm_max);
    err_sum += err;
    bound_sum += bound;
    if (err > bound) ++report.violations;
  }
  report.observed_mse = err_sum / static_cast<double>(config.trials);
  report.bound = bound_sum / static_cast<double>(config.trials);
  return report;
}

}  // namespace smallkv
