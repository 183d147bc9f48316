// SPDX-License-Identifier: Apache-2.0
#include "smallkv/matching.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>

#include <nlohmann/json.hpp>

#include "smallkv/errors.hpp"

namespace smallkv {

IndexSet::IndexSet(std::vector<std::size_t> indices) : indices_(std::move(indices)) {
  std::sort(indices_.begin(), indices_.end());
  if (std::adjacent_find(indices_.begin(), indices_.end()) != indices_.end()) {
    throw InvariantError("index set contains duplicate positions");
  }
}

IndexSet IndexSet::range(std::size_t begin, std::size_t end) {
  IndexSet s;
  if (end > begin) {
    s.indices_.resize(end - begin);
    std::iota(s.indices_.begin(), s.indices_.end(), begin);
  }
  return s;
}

bool IndexSet::contains(std::size_t pos) const noexcept {
  return std::binary_search(indices_.begin(), indices_.end(), pos);
}

IndexSet set_union(const IndexSet& a, const IndexSet& b) {
  std::vector<std::size_t> out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return IndexSet(std::move(out));
}

IndexSet set_intersection(const IndexSet& a, const IndexSet& b) {
  std::vector<std::size_t> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return IndexSet(std::move(out));
}

std::vector<std::size_t> rank_positions(const ScoreVector& scores,
                                        std::span<const std::size_t> candidates) {
  std::vector<std::size_t> order(candidates.begin(), candidates.end());
  for (std::size_t pos : order) {
    if (pos >= scores.size()) {
      throw RangeError("rank_positions: candidate " + std::to_string(pos) + " out of range");
    }
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return order;
}

IndexSet topk_indices(const ScoreVector& scores, std::size_t k) {
  const std::size_t n = scores.size();
  if (k > n) {
    throw BudgetError("topk: k=" + std::to_string(k) + " exceeds context length " +
                      std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                   better);
  order.resize(k);
  return IndexSet(std::move(order));
}

double jaccard(const IndexSet& a, const IndexSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++common;
      ++ia;
      ++ib;
    }
  }
  const std::size_t uni = a.size() + b.size() - common;
  return static_cast<double>(common) / static_cast<double>(uni);
}

double cosine(const ScoreVector& a, const ScoreVector& b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine: length mismatch");
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw DegenerateInputError("cosine: zero vector");
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

WindowDecision matching_window(std::size_t prompt_len, std::size_t min_len,
                               std::size_t max_len) {
  if (min_len > max_len) {
    throw ConfigError("matching window: min_len exceeds max_len");
  }
  if (prompt_len < min_len) {
    return {true, {}};
  }
  if (prompt_len > max_len) {
    return {false, {prompt_len - max_len, prompt_len}};
  }
  return {false, {0, prompt_len}};
}

std::size_t default_match_topk(std::size_t window_len) {
  const auto scaled = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(window_len)));
  return std::min(window_len, std::max<std::size_t>(16, scaled));
}

ScoreVector window_scores(const AttentionMatrix& a, MatchWindow window) {
  if (window.end > a.size() || window.begin >= window.end) {
    throw DimensionError("window_scores: window outside the attention matrix");
  }
  const std::size_t len = window.length();
  std::vector<double> scores(len, 0.0);
  for (std::size_t u = window.begin; u < window.end; ++u) {
    const auto row = a.row(u);
    double mass = 0.0;
    for (std::size_t v = window.begin; v <= u; ++v) mass += row[v];
    if (mass <= 0.0) continue;
    for (std::size_t v = window.begin; v <= u; ++v) {
      scores[v - window.begin] += row[v] / mass;
    }
  }
  return ScoreVector(std::move(scores));
}

HeadMap::HeadMap(std::vector<HeadMatch> entries, MatchWindow window, std::size_t topk)
    : entries_(std::move(entries)), window_(window), topk_(topk) {
  std::sort(entries_.begin(), entries_.end(),
            [](const HeadMatch& a, const HeadMatch& b) { return a.llm < b.llm; });
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    if (entries_[i - 1].llm == entries_[i].llm) {
      throw InvariantError("head map has two entries for " + to_string(entries_[i].llm));
    }
  }
}

const HeadMatch* HeadMap::find(HeadId llm) const noexcept {
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), llm,
                                   [](const HeadMatch& m, HeadId id) { return m.llm < id; });
  if (it == entries_.end() || it->llm != llm) return nullptr;
  return &*it;
}

const HeadMatch& HeadMap::at(HeadId llm) const {
  const auto* m = find(llm);
  if (m == nullptr) {
    throw RangeError("head map has no entry for " + to_string(llm));
  }
  return *m;
}

double HeadMap::mean_similarity() const noexcept {
  if (entries_.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& e : entries_) sum += e.similarity;
  return sum / static_cast<double>(entries_.size());
}

std::string HeadMap::to_json() const {
  nlohmann::json doc;
  doc["window"] = {{"begin", window_.begin}, {"end", window_.end}};
  doc["topk"] = topk_;
  auto& records = doc["heads"] = nlohmann::json::array();
  for (const auto& e : entries_) {
    records.push_back({{"layer", e.llm.layer},
                       {"head", e.llm.head},
                       {"slm_layer", e.slm.layer},
                       {"slm_head", e.slm.head},
                       {"similarity", e.similarity}});
  }
  return doc.dump(2);
}

HeadMap HeadMap::from_json(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    std::vector<HeadMatch> entries;
    for (const auto& r : doc.at("heads")) {
      entries.push_back({{r.at("layer").get<std::size_t>(), r.at("head").get<std::size_t>()},
                         {r.at("slm_layer").get<std::size_t>(), r.at("slm_head").get<std::size_t>()},
                         r.at("similarity").get<double>()});
    }
    const auto& w = doc.at("window");
    return HeadMap(std::move(entries),
                   {w.at("begin").get<std::size_t>(), w.at("end").get<std::size_t>()},
                   doc.at("topk").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("head map: ") + e.what());
  }
}

HeadMap match_heads(std::span<const HeadScores> llm, std::span<const HeadScores> slm,
                    std::size_t k, MatchWindow window) {
  if (slm.empty()) {
    throw ConfigError("match_heads: no SLM heads to match against");
  }
  const std::size_t n = slm.front().scores.size();
  const auto check_len = [n](const HeadScores& h) {
    if (h.scores.size() != n) {
      throw DimensionError("match_heads: " + to_string(h.id) + " has context length " +
                           std::to_string(h.scores.size()) + ", expected " + std::to_string(n));
    }
  };
  for (const auto& h : slm) check_len(h);
  for (const auto& h : llm) check_len(h);

  // Candidates visited in (layer, head) order so strict '>' keeps the smallest on ties.
  std::vector<std::size_t> order(slm.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return slm[a].id < slm[b].id; });

  std::vector<IndexSet> slm_top;
  slm_top.reserve(slm.size());
  for (const auto& h : slm) slm_top.push_back(topk_indices(h.scores, k));

  std::vector<HeadMatch> entries;
  entries.reserve(llm.size());
  for (const auto& h : llm) {
    const IndexSet top = topk_indices(h.scores, k);
    HeadMatch best{h.id, slm[order.front()].id, -1.0};
    for (std::size_t j : order) {
      const double s = jaccard(top, slm_top[j]);
      if (s > best.similarity) {
        best.slm = slm[j].id;
        best.similarity = s;
      }
    }
    entries.push_back(best);
  }
  if (window.end == 0) window = {0, n};
  return HeadMap(std::move(entries), window, k);
}

}  // namespace smallkv
