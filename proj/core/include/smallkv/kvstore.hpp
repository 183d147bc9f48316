// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smallkv/eviction.hpp"

namespace smallkv {

/// Shape parameters of a decoder-only transformer, as used by the cost models.
struct ModelConfig {
  std::string name;
  std::size_t layers = 0;           // L
  std::size_t attn_heads = 0;       // N_att per layer
  std::size_t kv_heads = 0;         // N_kv per layer
  std::size_t head_dim = 0;         // D_kv
  std::size_t hidden_dim = 0;       // D_h
  std::size_t vocab = 0;            // |V|
  std::size_t bytes_per_value = 2;  // C_b

  /// Throws ConfigError on a zero field.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

ModelConfig qwen2_7b();
ModelConfig qwen2_72b();
/// "qwen2-7b" or "qwen2-72b"; nullopt otherwise.
std::optional<ModelConfig> model_preset(std::string_view name);

enum class Tier : std::uint8_t { hot, cold };
enum class EntryKind : std::uint8_t { full_kv, v_only, evicted };
enum class CacheHalf : std::uint8_t { key, value };

std::string_view to_string(Tier t) noexcept;
std::string_view to_string(EntryKind k) noexcept;
std::string_view to_string(CacheHalf h) noexcept;

/// Placement of one token's K and V for one (layer, kv_head). The kind is
/// derived from where the halves live; a hot K with a cold V never occurs.
struct CacheEntry {
  std::size_t token_pos = 0;
  std::size_t layer = 0;
  std::size_t kv_head = 0;
  Tier key_tier = Tier::hot;
  Tier value_tier = Tier::hot;

  EntryKind kind() const noexcept;
  /// Hot-view tier; evicted entries have none.
  std::optional<Tier> tier() const noexcept;
};

struct Migration {
  std::size_t layer = 0;
  std::size_t kv_head = 0;
  std::size_t token_pos = 0;
  CacheHalf half = CacheHalf::key;
  Tier from = Tier::hot;
  Tier to = Tier::cold;

  friend bool operator==(const Migration&, const Migration&) = default;
};

/// Per layer/kv-head token cache with hot (device) and cold (offloaded) tiers.
///
/// Nothing is ever deleted: eviction demotes halves to the cold tier and a
/// later plan may promote them back. Hot-entry counters are maintained
/// incrementally; entries() exposes the raw table for recounting.
class TieredKVStore {
 public:
  TieredKVStore() = default;
  TieredKVStore(std::size_t layers, std::size_t kv_heads, std::size_t head_dim);

  std::size_t layers() const noexcept { return layers_; }
  std::size_t kv_heads() const noexcept { return kv_heads_; }
  std::size_t head_dim() const noexcept { return head_dim_; }
  std::size_t tokens(std::size_t layer, std::size_t kv_head) const;

  /// Appends the next token's K and V as FULL_KV in the hot tier.
  void append(std::size_t layer, std::size_t kv_head, std::span<const double> key,
              std::span<const double> value);

  /// Moves entries to match `decision`: critical/recent -> FULL_KV hot,
  /// marginal -> V_ONLY (K cold), evicted -> both halves cold. Returns the
  /// migrations performed (empty when already in place). Throws RangeError
  /// when the decision covers a different number of tokens than stored.
  std::vector<Migration> apply_plan(const RetainDecision& decision, std::size_t layer,
                                    std::size_t kv_head);

  const CacheEntry& entry(std::size_t layer, std::size_t kv_head, std::size_t pos) const;

  /// Every key of the head, in either tier, row-major (scoring/normalizer pass).
  std::span<const double> keys(std::size_t layer, std::size_t kv_head) const;
  /// Hot V row; throws CacheMissError when V is cold.
  std::span<const double> resident_value(std::size_t layer, std::size_t kv_head,
                                         std::size_t pos) const;

  /// Running count of entries of `kind` across all heads.
  std::size_t count(EntryKind kind) const noexcept;
  std::size_t total_entries() const noexcept;

  std::vector<CacheEntry> entries() const;

 private:
  struct HeadCache {
    std::vector<CacheEntry> entries;
    std::vector<double> keys;
    std::vector<double> values;
  };

  HeadCache& head(std::size_t layer, std::size_t kv_head);
  const HeadCache& head(std::size_t layer, std::size_t kv_head) const;
  void move_half(CacheEntry& e, CacheHalf half, Tier to, std::vector<Migration>& log);
  void bump(EntryKind kind, long delta) noexcept;

  std::size_t layers_ = 0;
  std::size_t kv_heads_ = 0;
  std::size_t head_dim_ = 0;
  std::vector<HeadCache> heads_;
  std::size_t full_count_ = 0;
  std::size_t v_only_count_ = 0;
  std::size_t evicted_count_ = 0;
};

/// Hot-tier bytes from the store's counters: FULL_KV costs 2*D_kv*C_b per
/// (token, layer, kv_head, sequence), V_ONLY half that.
std::uint64_t hot_bytes(const TieredKVStore& store, const ModelConfig& config,
                        std::size_t batch = 1);
/// Same quantity recounted from a raw entry table.
std::uint64_t hot_bytes(std::span<const CacheEntry> entries, const ModelConfig& config,
                        std::size_t batch = 1);

/// M_kv = 2 * L * N_kv * D_kv * S * B * C_b.
std::uint64_t kv_cache_bytes(const ModelConfig& config, std::size_t seq_len, std::size_t batch);

/// L(24 B S D_h^2 + 4 B S^2 D_h) + 2 B L D_h |V|.
double model_flops(const ModelConfig& config, std::size_t seq_len, std::size_t batch);
/// 24 B S L D_h^2.
double model_flops_approx(const ModelConfig& config, std::size_t seq_len, std::size_t batch);
/// (L^a N^a + L^b N^b) B S^2 + L^a N^a L^b N^b B^2 S^2 for matching window S.
double matching_flops(const ModelConfig& a, const ModelConfig& b, std::size_t batch,
                      std::size_t sim_len);

struct CostReport {
  std::uint64_t kv_bytes = 0;
  double model_flops = 0.0;
  double model_flops_approx = 0.0;
  double matching_flops = 0.0;
};

/// Costs of `model` at (seq_len, batch); matching cost against `partner`.
CostReport cost_report(const ModelConfig& model, const ModelConfig& partner,
                       std::size_t seq_len, std::size_t batch, std::size_t sim_len);

}  // namespace smallkv
