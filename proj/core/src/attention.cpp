// SPDX-License-Identifier: Apache-2.0
#include "smallkv/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "smallkv/errors.hpp"

namespace smallkv {

std::string to_string(const HeadId& id) {
  return "L" + std::to_string(id.layer) + "H" + std::to_string(id.head);
}

AttentionMatrix::AttentionMatrix(Matrix weights, HeadId head, double tolerance)
    : weights_(std::move(weights)), head_(head) {
  const std::size_t n = weights_.rows();
  if (weights_.cols() != n) {
    throw DimensionError("attention matrix must be square, got " + std::to_string(n) + "x" +
                         std::to_string(weights_.cols()));
  }
  for (std::size_t u = 0; u < n; ++u) {
    double sum = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      const double w = weights_(u, v);
      if (!std::isfinite(w)) {
        throw NumericError("non-finite attention weight at row " + std::to_string(u) + " of " +
                           to_string(head_));
      }
      if (v > u && w != 0.0) {
        throw InvariantError("attention above the diagonal at (" + std::to_string(u) + "," +
                             std::to_string(v) + ") of " + to_string(head_));
      }
      if (w < 0.0 || w > 1.0) {
        throw InvariantError("attention weight outside [0,1] at (" + std::to_string(u) + "," +
                             std::to_string(v) + ") of " + to_string(head_));
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > tolerance) {
      throw InvariantError("attention row " + std::to_string(u) + " of " + to_string(head_) +
                           " sums to " + std::to_string(sum));
    }
  }
}

ScoreVector::ScoreVector(std::vector<double> values) : values_(std::move(values)) {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i]) || values_[i] < 0.0) {
      throw InvariantError("score at position " + std::to_string(i) +
                           " must be finite and non-negative");
    }
  }
}

double ScoreVector::total() const noexcept {
  return std::accumulate(values_.begin(), values_.end(), 0.0);
}

void ScoreVector::accumulate(std::span<const double> row) {
  if (row.size() > values_.size()) {
    values_.resize(row.size(), 0.0);
  }
  for (std::size_t v = 0; v < row.size(); ++v) {
    values_[v] += row[v];
  }
}

ScoreVector ScoreVector::prefix(std::size_t n) const {
  if (n > values_.size()) {
    throw DimensionError("prefix longer than score vector");
  }
  ScoreVector out;
  out.values_.assign(values_.begin(), values_.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

std::vector<double> attention_row(std::span<const double> query, std::span<const double> keys,
                                  std::size_t head_dim) {
  if (head_dim == 0 || query.size() != head_dim || keys.size() % head_dim != 0) {
    throw DimensionError("attention_row: query/key width does not match head_dim");
  }
  const std::size_t n = keys.size() / head_dim;
  if (n == 0) {
    throw DimensionError("attention_row: no keys");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<double> row(n);
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < n; ++v) {
    double dot = 0.0;
    for (std::size_t c = 0; c < head_dim; ++c) {
      dot += query[c] * keys[v * head_dim + c];
    }
    row[v] = dot * scale;
    max_logit = std::max(max_logit, row[v]);
  }
  if (!std::isfinite(max_logit)) {
    throw NumericError("attention_row: non-finite logits");
  }
  double denom = 0.0;
  for (double& x : row) {
    x = std::exp(x - max_logit);
    denom += x;
  }
  for (double& x : row) {
    x /= denom;
  }
  return row;
}

AttentionMatrix causal_attention(const Matrix& q, const Matrix& k, std::size_t head_dim,
                                 HeadId head) {
  if (q.rows() != k.rows() || q.cols() != k.cols()) {
    throw DimensionError("causal_attention: Q and K shapes differ");
  }
  if (q.cols() != head_dim) {
    throw DimensionError("causal_attention: head_dim does not match Q/K width");
  }
  if (q.rows() == 0) {
    throw DimensionError("causal_attention: empty context");
  }
  for (double x : q.data()) {
    if (!std::isfinite(x)) throw NumericError("causal_attention: non-finite query");
  }
  for (double x : k.data()) {
    if (!std::isfinite(x)) throw NumericError("causal_attention: non-finite key");
  }

  const std::size_t n = q.rows();
  Matrix weights(n, n);
  for (std::size_t u = 0; u < n; ++u) {
    // Only keys 0..u take part in the normalizer.
    const auto visible = k.data().first((u + 1) * head_dim);
    const auto row = attention_row(q.row(u), visible, head_dim);
    std::copy(row.begin(), row.end(), weights.row(u).begin());
  }
  return AttentionMatrix(std::move(weights), head);
}

ScoreVector accumulate_scores(const AttentionMatrix& a) {
  const std::size_t n = a.size();
  std::vector<double> scores(n, 0.0);
  for (std::size_t u = 0; u < n; ++u) {
    const auto row = a.row(u);
    for (std::size_t v = 0; v <= u; ++v) {
      scores[v] += row[v];
    }
  }
  return ScoreVector(std::move(scores));
}

std::vector<double> attention_output(std::span<const double> a_row,
                                     std::span<const double> values, std::size_t head_dim) {
  if (head_dim == 0 || values.size() != a_row.size() * head_dim) {
    throw DimensionError("attention_output: row length " + std::to_string(a_row.size()) +
                         " does not match " + std::to_string(values.size() / std::max<std::size_t>(head_dim, 1)) +
                         " value rows");
  }
  std::vector<double> out(head_dim, 0.0);
  for (std::size_t pos = 0; pos < a_row.size(); ++pos) {
    const double w = a_row[pos];
    if (w == 0.0) continue;
    const auto vr = values.subspan(pos * head_dim, head_dim);
    for (std::size_t c = 0; c < head_dim; ++c) {
      out[c] += w * vr[c];
    }
  }
  return out;
}

std::vector<double> attention_output(std::span<const double> a_row, const Matrix& v) {
  if (a_row.size() != v.rows()) {
    throw DimensionError("attention_output: row length " + std::to_string(a_row.size()) +
                         " does not match " + std::to_string(v.rows()) + " value rows");
  }
  return attention_output(a_row, v.data(), v.cols());
}

}  // namespace smallkv
