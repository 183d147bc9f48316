// SPDX-License-Identifier: Apache-2.0
#include "smallkv/kvstore.hpp"

#include <string>

#include "smallkv/errors.hpp"

namespace smallkv {

void ModelConfig::validate() const {
  if (layers == 0 || attn_heads == 0 || kv_heads == 0 || head_dim == 0 || hidden_dim == 0 ||
      vocab == 0 || bytes_per_value == 0) {
    throw ConfigError("model config '" + name + "' has a zero dimension");
  }
}

ModelConfig qwen2_7b() { return {"qwen2-7b", 28, 28, 4, 128, 3584, 152064, 2}; }
ModelConfig qwen2_72b() { return {"qwen2-72b", 80, 64, 8, 128, 8192, 152064, 2}; }

std::optional<ModelConfig> model_preset(std::string_view name) {
  if (name == "qwen2-7b") return qwen2_7b();
  if (name == "qwen2-72b") return qwen2_72b();
  return std::nullopt;
}

std::string_view to_string(Tier t) noexcept { return t == Tier::hot ? "hot" : "cold"; }

std::string_view to_string(EntryKind k) noexcept {
  switch (k) {
    case EntryKind::full_kv: return "full_kv";
    case EntryKind::v_only: return "v_only";
    case EntryKind::evicted: return "evicted";
  }
  return "?";
}

std::string_view to_string(CacheHalf h) noexcept { return h == CacheHalf::key ? "K" : "V"; }

EntryKind CacheEntry::kind() const noexcept {
  if (value_tier == Tier::cold) return EntryKind::evicted;
  return key_tier == Tier::hot ? EntryKind::full_kv : EntryKind::v_only;
}

std::optional<Tier> CacheEntry::tier() const noexcept {
  if (kind() == EntryKind::evicted) return std::nullopt;
  return Tier::hot;
}

TieredKVStore::TieredKVStore(std::size_t layers, std::size_t kv_heads, std::size_t head_dim)
    : layers_(layers), kv_heads_(kv_heads), head_dim_(head_dim), heads_(layers * kv_heads) {
  if (layers == 0 || kv_heads == 0 || head_dim == 0) {
    throw ConfigError("kv store needs positive layers, heads and head_dim");
  }
}

TieredKVStore::HeadCache& TieredKVStore::head(std::size_t layer, std::size_t kv_head) {
  if (layer >= layers_ || kv_head >= kv_heads_) {
    throw RangeError("kv store: no head L" + std::to_string(layer) + "H" +
                     std::to_string(kv_head));
  }
  return heads_[layer * kv_heads_ + kv_head];
}

const TieredKVStore::HeadCache& TieredKVStore::head(std::size_t layer,
                                                    std::size_t kv_head) const {
  if (layer >= layers_ || kv_head >= kv_heads_) {
    throw RangeError("kv store: no head L" + std::to_string(layer) + "H" +
                     std::to_string(kv_head));
  }
  return heads_[layer * kv_heads_ + kv_head];
}

std::size_t TieredKVStore::tokens(std::size_t layer, std::size_t kv_head) const {
  return head(layer, kv_head).entries.size();
}

void TieredKVStore::append(std::size_t layer, std::size_t kv_head, std::span<const double> key,
                           std::span<const double> value) {
  if (key.size() != head_dim_ || value.size() != head_dim_) {
    throw DimensionError("kv store: appended K/V width does not match head_dim");
  }
  auto& h = head(layer, kv_head);
  h.entries.push_back({h.entries.size(), layer, kv_head, Tier::hot, Tier::hot});
  h.keys.insert(h.keys.end(), key.begin(), key.end());
  h.values.insert(h.values.end(), value.begin(), value.end());
  ++full_count_;
}

void TieredKVStore::bump(EntryKind kind, long delta) noexcept {
  switch (kind) {
    case EntryKind::full_kv: full_count_ += static_cast<std::size_t>(delta); break;
    case EntryKind::v_only: v_only_count_ += static_cast<std::size_t>(delta); break;
    case EntryKind::evicted: evicted_count_ += static_cast<std::size_t>(delta); break;
  }
}

void TieredKVStore::move_half(CacheEntry& e, CacheHalf half, Tier to,
                              std::vector<Migration>& log) {
  Tier& slot = half == CacheHalf::key ? e.key_tier : e.value_tier;
  if (slot == to) return;
  log.push_back({e.layer, e.kv_head, e.token_pos, half, slot, to});
  slot = to;
}

std::vector<Migration> TieredKVStore::apply_plan(const RetainDecision& decision,
                                                 std::size_t layer, std::size_t kv_head) {
  auto& h = head(layer, kv_head);
  if (decision.context_len != h.entries.size()) {
    throw RangeError("apply_plan: decision covers " + std::to_string(decision.context_len) +
                     " tokens, store holds " + std::to_string(h.entries.size()));
  }
  std::vector<Migration> log;
  const auto place = [&](const IndexSet& set, Tier key_to, Tier value_to) {
    for (std::size_t pos : set) {
      if (pos >= h.entries.size()) {
        throw RangeError("apply_plan: unknown position " + std::to_string(pos));
      }
      auto& e = h.entries[pos];
      const EntryKind before = e.kind();
      // Promote V before K and demote K before V so no intermediate state has a
      // hot key over a cold value.
      if (value_to == Tier::hot) {
        move_half(e, CacheHalf::value, value_to, log);
        move_half(e, CacheHalf::key, key_to, log);
      } else {
        move_half(e, CacheHalf::key, key_to, log);
        move_half(e, CacheHalf::value, value_to, log);
      }
      const EntryKind after = e.kind();
      if (before != after) {
        bump(before, -1);
        bump(after, +1);
      }
    }
  };
  place(decision.critical, Tier::hot, Tier::hot);
  place(decision.recent, Tier::hot, Tier::hot);
  place(decision.marginal, Tier::cold, Tier::hot);
  place(decision.evicted, Tier::cold, Tier::cold);
  return log;
}

const CacheEntry& TieredKVStore::entry(std::size_t layer, std::size_t kv_head,
                                       std::size_t pos) const {
  const auto& h = head(layer, kv_head);
  if (pos >= h.entries.size()) {
    throw RangeError("kv store: position " + std::to_string(pos) + " not stored");
  }
  return h.entries[pos];
}

std::span<const double> TieredKVStore::keys(std::size_t layer, std::size_t kv_head) const {
  return head(layer, kv_head).keys;
}

std::span<const double> TieredKVStore::resident_value(std::size_t layer, std::size_t kv_head,
                                                      std::size_t pos) const {
  const auto& h = head(layer, kv_head);
  if (pos >= h.entries.size()) {
    throw RangeError("kv store: position " + std::to_string(pos) + " not stored");
  }
  if (h.entries[pos].value_tier != Tier::hot) {
    throw CacheMissError("V of token " + std::to_string(pos) + " at L" + std::to_string(layer) +
                         "H" + std::to_string(kv_head) + " is not resident");
  }
  return std::span<const double>(h.values).subspan(pos * head_dim_, head_dim_);
}

std::size_t TieredKVStore::count(EntryKind kind) const noexcept {
  switch (kind) {
    case EntryKind::full_kv: return full_count_;
    case EntryKind::v_only: return v_only_count_;
    case EntryKind::evicted: return evicted_count_;
  }
  return 0;
}

std::size_t TieredKVStore::total_entries() const noexcept {
  return full_count_ + v_only_count_ + evicted_count_;
}

std::vector<CacheEntry> TieredKVStore::entries() const {
  std::vector<CacheEntry> out;
  out.reserve(total_entries());
  for (const auto& h : heads_) out.insert(out.end(), h.entries.begin(), h.entries.end());
  return out;
}

namespace {

std::uint64_t bytes_for(std::uint64_t full, std::uint64_t v_only, const ModelConfig& config,
                        std::size_t batch) {
  const std::uint64_t half = static_cast<std::uint64_t>(config.head_dim) *
                             config.bytes_per_value * static_cast<std::uint64_t>(batch);
  return (2 * full + v_only) * half;
}

__extension__ using u128 = unsigned __int128;

}  // namespace

std::uint64_t hot_bytes(const TieredKVStore& store, const ModelConfig& config,
                        std::size_t batch) {
  return bytes_for(store.count(EntryKind::full_kv), store.count(EntryKind::v_only), config,
                   batch);
}

std::uint64_t hot_bytes(std::span<const CacheEntry> entries, const ModelConfig& config,
                        std::size_t batch) {
  std::uint64_t full = 0;
  std::uint64_t v_only = 0;
  for (const auto& e : entries) {
    switch (e.kind()) {
      case EntryKind::full_kv: ++full; break;
      case EntryKind::v_only: ++v_only; break;
      case EntryKind::evicted: break;
    }
  }
  return bytes_for(full, v_only, config, batch);
}

std::uint64_t kv_cache_bytes(const ModelConfig& config, std::size_t seq_len, std::size_t batch) {
  return 2ULL * config.layers * config.kv_heads * config.head_dim * seq_len * batch *
         config.bytes_per_value;
}

// Flop counts overflow 64 bits for large batches; evaluate exactly in 128 bits.
double model_flops(const ModelConfig& config, std::size_t seq_len, std::size_t batch) {
  const u128 L = config.layers;
  const u128 B = batch;
  const u128 S = seq_len;
  const u128 D = config.hidden_dim;
  const u128 V = config.vocab;
  const u128 total = L * (24 * B * S * D * D + 4 * B * S * S * D) + 2 * B * L * D * V;
  return static_cast<double>(total);
}

double model_flops_approx(const ModelConfig& config, std::size_t seq_len, std::size_t batch) {
  const u128 total = u128{24} * batch * seq_len * config.layers * config.hidden_dim *
                     config.hidden_dim;
  return static_cast<double>(total);
}

double matching_flops(const ModelConfig& a, const ModelConfig& b, std::size_t batch,
                      std::size_t sim_len) {
  if (sim_len == 0) {
    throw ConfigError("matching_flops: matching window length must be positive");
  }
  const u128 heads_a = u128{a.layers} * a.attn_heads;
  const u128 heads_b = u128{b.layers} * b.attn_heads;
  const u128 B = batch;
  const u128 S2 = u128{sim_len} * sim_len;
  return static_cast<double>((heads_a + heads_b) * B * S2 + heads_a * heads_b * B * B * S2);
}

CostReport cost_report(const ModelConfig& model, const ModelConfig& partner,
                       std::size_t seq_len, std::size_t batch, std::size_t sim_len) {
  return {kv_cache_bytes(model, seq_len, batch), model_flops(model, seq_len, batch),
          model_flops_approx(model, seq_len, batch),
          matching_flops(model, partner, batch, sim_len)};
}

}  // namespace smallkv
