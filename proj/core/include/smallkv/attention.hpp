// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "smallkv/matrix.hpp"

namespace smallkv {

/// (layer, head) coordinate of an attention head. Ordered lexicographically.
struct HeadId {
  std::size_t layer = 0;
  std::size_t head = 0;

  friend auto operator<=>(const HeadId&, const HeadId&) = default;
};

std::string to_string(const HeadId& id);

/// Row-stochastic tolerance accepted by AttentionMatrix.
inline constexpr double kRowSumTolerance = 1e-5;

/// Causal, row-stochastic n x n attention weights of one head.
///
/// Construction validates that every row sums to one (within the given
/// tolerance), every entry lies in [0, 1], and nothing sits above the diagonal.
class AttentionMatrix {
 public:
  AttentionMatrix() = default;
  explicit AttentionMatrix(Matrix weights, HeadId head = {},
                           double tolerance = kRowSumTolerance);

  std::size_t size() const noexcept { return weights_.rows(); }
  HeadId head() const noexcept { return head_; }
  double operator()(std::size_t u, std::size_t v) const noexcept { return weights_(u, v); }
  std::span<const double> row(std::size_t u) const noexcept { return weights_.row(u); }
  const Matrix& weights() const noexcept { return weights_; }

 private:
  Matrix weights_;
  HeadId head_;
};

/// Accumulated attention mass per token position (column sums over the rows seen).
class ScoreVector {
 public:
  ScoreVector() = default;
  explicit ScoreVector(std::vector<double> values);

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  double total() const noexcept;

  /// Adds one attention row; grows the vector when the row is longer (new tokens).
  void accumulate(std::span<const double> row);

  /// Returns the leading `n` entries.
  ScoreVector prefix(std::size_t n) const;

  friend bool operator==(const ScoreVector&, const ScoreVector&) = default;

 private:
  std::vector<double> values_;
};

/// Softmax of query . key_v / sqrt(head_dim) over every key in `keys`
/// (row-major, keys.size() / head_dim rows). Max-subtracted for stability.
std::vector<double> attention_row(std::span<const double> query, std::span<const double> keys,
                                  std::size_t head_dim);

/// Causally masked scaled-dot-product attention weights for one head.
/// Masked positions never enter the normalizer, so rows are exactly stochastic.
AttentionMatrix causal_attention(const Matrix& q, const Matrix& k, std::size_t head_dim,
                                 HeadId head = {});

/// Column sums of `a` over all rows.
ScoreVector accumulate_scores(const AttentionMatrix& a);

/// Sum over v of a_row[v] * V[v].
std::vector<double> attention_output(std::span<const double> a_row, const Matrix& v);
/// Same over a row-major value buffer of a_row.size() rows.
std::vector<double> attention_output(std::span<const double> a_row,
                                     std::span<const double> values, std::size_t head_dim);

}  // namespace smallkv
