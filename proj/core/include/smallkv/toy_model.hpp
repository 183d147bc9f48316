// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "smallkv/attention.hpp"
#include "smallkv/kvstore.hpp"
#include "smallkv/matching.hpp"
#include "smallkv/matrix.hpp"

namespace smallkv {

struct ToyModelSpec {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t vocab = 128;
  std::uint64_t seed = 0;
  /// Seed of the per-token content features shared by a model family
  /// (same tokenizer). Defaults to `seed`.
  std::optional<std::uint64_t> family_seed;
  std::size_t content_dim = 32;
  /// Scale of the query/key projections; larger means peakier attention.
  double qk_gain = 1.5;
  /// Correlation between a head's key and query projections. Positive values
  /// make tokens attend to earlier occurrences of themselves.
  double self_match = 0.6;
  /// Scale of each head's write into the residual stream.
  double out_scale = 0.5;
};

struct HeadParams {
  Matrix w_query;  // content_dim x head_dim
  Matrix w_key;    // content_dim x head_dim
  Matrix w_value;  // hidden x head_dim
  Matrix w_out;    // head_dim x hidden
};

/// Small seeded decoder. Queries and keys are projections of per-token
/// content features, values read the residual stream, each layer adds its
/// heads' outputs back into the stream, and the next token is the argmax of
/// an unembedding of the final state. One KV head per attention head.
class ToyModel {
 public:
  /// Deterministic in the spec: same spec, bit-identical parameters.
  static ToyModel generate(const ToyModelSpec& spec);

  const ToyModelSpec& spec() const noexcept { return spec_; }
  ModelConfig config() const;
  std::size_t hidden_dim() const noexcept { return spec_.heads * spec_.head_dim; }
  std::size_t head_count() const noexcept { return spec_.layers * spec_.heads; }
  std::size_t flat_index(HeadId id) const;
  HeadId head_id(std::size_t flat) const noexcept {
    return {flat / spec_.heads, flat % spec_.heads};
  }

  const HeadParams& params(HeadId id) const { return heads_.at(flat_index(id)); }
  HeadParams& params(HeadId id) { return heads_.at(flat_index(id)); }

  std::vector<double> query(HeadId id, int token) const;
  std::vector<double> key(HeadId id, int token) const;
  /// Value projection of the RMS-normalized residual state.
  std::vector<double> value(HeadId id, std::span<const double> hidden) const;
  /// Adds head output projected to the residual width into `hidden`.
  void write_output(HeadId id, std::span<const double> out, std::span<double> hidden) const;
  std::vector<double> embed(int token) const;
  int greedy_token(std::span<const double> hidden) const;

 private:
  void check_token(int token) const;

  ToyModelSpec spec_;
  Matrix content_;    // vocab x content_dim (family-shared)
  Matrix embedding_;  // vocab x hidden
  Matrix unembed_;    // hidden x vocab
  std::vector<HeadParams> heads_;
};

/// Incremental full-cache forward of a ToyModel.
class ToyRunner {
 public:
  struct Step {
    std::vector<std::vector<double>> rows;     // per flat head, length = context
    std::vector<std::vector<double>> outputs;  // per flat head, length = head_dim
    int next_token = 0;
  };

  explicit ToyRunner(const ToyModel& model, bool keep_rows = false);

  Step step(int token);
  std::size_t context_len() const noexcept { return tokens_.size(); }
  std::span<const int> tokens() const noexcept { return tokens_; }
  std::span<const double> keys(std::size_t flat) const { return keys_.at(flat); }
  std::span<const double> values(std::size_t flat) const { return values_.at(flat); }

  /// Attention matrix of one head over everything fed so far (needs keep_rows).
  AttentionMatrix attention(std::size_t flat) const;

 private:
  const ToyModel* model_;
  bool keep_rows_;
  std::vector<int> tokens_;
  std::vector<std::vector<double>> keys_;
  std::vector<std::vector<double>> values_;
  std::vector<std::vector<std::vector<double>>> rows_;
};

/// Attention matrices of every head for a prompt, in flat head order.
std::vector<AttentionMatrix> forward_attention(const ToyModel& model, std::span<const int> tokens);

/// SLM whose heads are noised copies of distinct LLM heads.
struct PlantedPair {
  ToyModel llm;
  ToyModel slm;
  HeadMap planted_map;  // copied LLM head -> its SLM clone
  double noise_sigma = 0.0;
};

/// SLM head with flat index j copies the query/key projections of LLM head
/// perm[j], where perm is a seeded permutation of the LLM heads, plus Gaussian
/// noise of `noise_sigma` times the projection scale. Noise for head j depends
/// only on (seed, j), so a larger pool extends a smaller one. The SLM shares
/// the LLM's content features. Throws ConfigError when the SLM has more heads
/// than the LLM.
PlantedPair gen_planted_pair(const ToyModel& llm, std::size_t slm_layers, std::size_t slm_heads,
                             double noise_sigma, std::uint64_t seed);

}  // namespace smallkv
