// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "smallkv/eviction.hpp"

namespace smallkv {

/// Synthetic attention stream with latent topics. Each topic owns a disjoint
/// set of prompt positions drawn from the middle half of the prompt. Prompt
/// rows give topic t a share of topic_mass proportional to latent_decay^t.
/// Decode rows give all of topic_mass to the active topic. Topic mass is split
/// evenly over the topic's visible positions and the remainder of each row is
/// spread uniformly over the whole visible context. Topic 0 is active first;
/// the active topic advances at each decode step listed in flip_steps
/// (1-based).
struct SaliencyStreamSpec {
  std::uint64_t seed = 0;
  std::size_t prompt_len = 200;
  std::size_t decode_len = 200;
  std::size_t n_topics = 3;
  std::size_t topic_size = 8;
  std::vector<std::size_t> flip_steps{20, 100};
  double topic_mass = 0.8;
  double latent_decay = 0.5;

  void validate() const;
};

struct SaliencyStream {
  AttentionStream rows;
  std::vector<std::vector<std::size_t>> topics;  // sorted prompt positions per topic
};

SaliencyStream gen_saliency_stream(const SaliencyStreamSpec& spec);

/// Multiplies each weight by exp(sigma * z) and renormalizes the row. A stand-in
/// for a smaller model whose attention is a perturbed copy of the target's.
AttentionStream perturb_stream(const AttentionStream& stream, double sigma, std::uint64_t seed);

/// Token sequence for the end-to-end simulator. Topic token ids are the
/// lowest n_topics * topic_size ids; each topic token occurs `occurrences`
/// times in the prompt at seeded positions and the remaining prompt slots
/// hold background ids. The forced continuation repeats ids of the active
/// topic, which advances at each flip step, so the queries of a self-matching
/// model shift their attention between topic occurrences.
struct FlipWorkloadSpec {
  std::uint64_t seed = 0;
  std::size_t vocab = 128;
  std::size_t prompt_len = 160;
  std::size_t decode_len = 64;
  std::size_t n_topics = 2;
  std::size_t topic_size = 4;
  std::size_t occurrences = 3;
  std::vector<std::size_t> flip_steps{32};

  void validate() const;
};

struct FlipWorkload {
  std::vector<int> prompt;
  std::vector<int> continuation;  // forced decode tokens, decode_len long
};

FlipWorkload gen_flip_workload(const FlipWorkloadSpec& spec);

}  // namespace smallkv
