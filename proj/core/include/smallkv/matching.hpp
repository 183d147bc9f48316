// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smallkv/attention.hpp"

namespace smallkv {

/// Sorted set of distinct token positions.
class IndexSet {
 public:
  IndexSet() = default;
  /// Sorts `indices`; throws InvariantError on duplicates.
  explicit IndexSet(std::vector<std::size_t> indices);

  /// Positions [begin, end).
  static IndexSet range(std::size_t begin, std::size_t end);

  std::size_t size() const noexcept { return indices_.size(); }
  bool empty() const noexcept { return indices_.empty(); }
  bool contains(std::size_t pos) const noexcept;
  std::span<const std::size_t> values() const noexcept { return indices_; }
  auto begin() const noexcept { return indices_.begin(); }
  auto end() const noexcept { return indices_.end(); }

  friend bool operator==(const IndexSet&, const IndexSet&) = default;

 private:
  std::vector<std::size_t> indices_;
};

IndexSet set_union(const IndexSet& a, const IndexSet& b);
IndexSet set_intersection(const IndexSet& a, const IndexSet& b);

/// Orders `candidates` by descending score; equal scores keep the older
/// (smaller) position first.
std::vector<std::size_t> rank_positions(const ScoreVector& scores,
                                        std::span<const std::size_t> candidates);

/// The k highest-scoring positions, ties going to the smaller index.
/// Throws BudgetError when k exceeds the context length.
IndexSet topk_indices(const ScoreVector& scores, std::size_t k);

/// |a ∩ b| / |a ∪ b|; 1.0 when both are empty.
double jaccard(const IndexSet& a, const IndexSet& b);

/// Cosine similarity. Throws DegenerateInputError on a zero vector and
/// DimensionError on a length mismatch.
double cosine(const ScoreVector& a, const ScoreVector& b);

/// Token range [begin, end) used for similarity matching.
struct MatchWindow {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t length() const noexcept { return end - begin; }
  friend bool operator==(const MatchWindow&, const MatchWindow&) = default;
};

struct WindowDecision {
  bool defer = false;
  MatchWindow window;
};

inline constexpr std::size_t kMatchWindowMin = 100;
inline constexpr std::size_t kMatchWindowMax = 200;

/// Short prompts defer matching; long prompts keep the most recent `max_len` tokens.
WindowDecision matching_window(std::size_t prompt_len, std::size_t min_len = kMatchWindowMin,
                               std::size_t max_len = kMatchWindowMax);

/// max(16, ceil(0.2 * window_len)), never more than the window itself.
std::size_t default_match_topk(std::size_t window_len);

/// Scores of `a` as if the window were the whole context: each row inside
/// the window is restricted to window columns and renormalized.
ScoreVector window_scores(const AttentionMatrix& a, MatchWindow window);

struct HeadScores {
  HeadId id;
  ScoreVector scores;
};

struct HeadMatch {
  HeadId llm;
  HeadId slm;
  double similarity = 0.0;

  friend bool operator==(const HeadMatch&, const HeadMatch&) = default;
};

/// LLM head -> most similar SLM head.
class HeadMap {
 public:
  HeadMap() = default;
  HeadMap(std::vector<HeadMatch> entries, MatchWindow window, std::size_t topk);

  std::span<const HeadMatch> entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  MatchWindow window() const noexcept { return window_; }
  std::size_t topk() const noexcept { return topk_; }

  /// Throws RangeError for an LLM head without an entry.
  const HeadMatch& at(HeadId llm) const;
  const HeadMatch* find(HeadId llm) const noexcept;

  double mean_similarity() const noexcept;

  /// One record per LLM head: layer, head, slm_layer, slm_head, similarity.
  std::string to_json() const;
  static HeadMap from_json(const std::string& text);

  friend bool operator==(const HeadMap&, const HeadMap&) = default;

 private:
  std::vector<HeadMatch> entries_;  // sorted by llm head
  MatchWindow window_;
  std::size_t topk_ = 0;
};

/// For every LLM head picks argmax_j Jaccard(TopK(llm_i), TopK(slm_j)).
/// Ties go to the smallest SLM (layer, head). Throws ConfigError on an empty
/// SLM list, DimensionError on mixed context lengths.
HeadMap match_heads(std::span<const HeadScores> llm, std::span<const HeadScores> slm,
                    std::size_t k, MatchWindow window = {});

}  // namespace smallkv
