// SPDX-License-Identifier: Apache-2.0
#include "smallkv/workload.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "smallkv/errors.hpp"
#include "smallkv/random.hpp"

namespace smallkv {
namespace {

void check_flips(const std::vector<std::size_t>& flips, std::size_t decode_len) {
  for (std::size_t s : flips) {
    if (s == 0 || s > decode_len) {
      throw ConfigError("flip step " + std::to_string(s) + " outside decode range [1, " +
                        std::to_string(decode_len) + "]");
    }
  }
}

std::size_t active_topic(const std::vector<std::size_t>& flips, std::size_t step,
                         std::size_t n_topics) {
  std::size_t flips_seen = 0;
  for (std::size_t s : flips) {
    if (s <= step) ++flips_seen;
  }
  return flips_seen % n_topics;
}

}  // namespace

void SaliencyStreamSpec::validate() const {
  if (prompt_len == 0) throw ConfigError("saliency stream needs a non-empty prompt");
  if (n_topics == 0 || topic_size == 0) throw ConfigError("saliency stream needs topics");
  if (n_topics * topic_size > prompt_len / 2) {
    throw ConfigError("topics do not fit in the middle half of the prompt");
  }
  if (!(topic_mass >= 0.0 && topic_mass < 1.0)) {
    throw ConfigError("topic_mass must lie in [0, 1)");
  }
  if (!(latent_decay > 0.0 && latent_decay <= 1.0)) {
    throw ConfigError("latent_decay must lie in (0, 1]");
  }
  check_flips(flip_steps, decode_len);
}

SaliencyStream gen_saliency_stream(const SaliencyStreamSpec& spec) {
  spec.validate();
  const std::size_t lo = spec.prompt_len / 4;
  const std::size_t hi = lo + spec.prompt_len / 2;
  std::vector<std::size_t> pool(hi - lo);
  std::iota(pool.begin(), pool.end(), lo);
  Rng rng(derive_seed(spec.seed, 1));
  std::shuffle(pool.begin(), pool.end(), rng);

  SaliencyStream out;
  out.topics.resize(spec.n_topics);
  for (std::size_t t = 0; t < spec.n_topics; ++t) {
    auto& positions = out.topics[t];
    positions.assign(pool.begin() + static_cast<long>(t * spec.topic_size),
                     pool.begin() + static_cast<long>((t + 1) * spec.topic_size));
    std::sort(positions.begin(), positions.end());
  }

  const std::size_t total = spec.prompt_len + spec.decode_len;
  out.rows.prompt_len = spec.prompt_len;
  out.rows.rows.reserve(total);
  // Prompt rows share topic_mass across all topics with geometric weights, so
  // later topics are latent: present in the prompt but less salient.
  std::vector<double> prompt_share(spec.n_topics);
  double norm = 0.0;
  for (std::size_t t = 0; t < spec.n_topics; ++t) {
    prompt_share[t] = std::pow(spec.latent_decay, static_cast<double>(t));
    norm += prompt_share[t];
  }
  for (double& w : prompt_share) w *= spec.topic_mass / norm;

  const double size = static_cast<double>(spec.topic_size);
  for (std::size_t u = 0; u < total; ++u) {
    std::vector<double> row(u + 1, 0.0);
    double used = 0.0;
    const auto place = [&](std::size_t topic, double mass) {
      for (std::size_t p : out.topics[topic]) {
        if (p <= u) {
          row[p] += mass / size;
          used += mass / size;
        }
      }
    };
    if (u < spec.prompt_len) {
      for (std::size_t t = 0; t < spec.n_topics; ++t) place(t, prompt_share[t]);
    } else {
      place(active_topic(spec.flip_steps, u - spec.prompt_len + 1, spec.n_topics), spec.topic_mass);
    }
    const double background = (1.0 - used) / static_cast<double>(u + 1);
    for (double& w : row) w += background;
    out.rows.rows.push_back(std::move(row));
  }
  return out;
}

AttentionStream perturb_stream(const AttentionStream& stream, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw ConfigError("perturbation sigma must be non-negative");
  Rng rng(derive_seed(seed, 2));
  std::normal_distribution<double> normal(0.0, 1.0);
  AttentionStream out;
  out.prompt_len = stream.prompt_len;
  out.rows.reserve(stream.rows.size());
  for (const auto& row : stream.rows) {
    std::vector<double> noisy(row.size());
    double sum = 0.0;
    for (std::size_t v = 0; v < row.size(); ++v) {
      noisy[v] = row[v] * std::exp(sigma * normal(rng));
      sum += noisy[v];
    }
    if (sum > 0.0) {
      for (double& w : noisy) w /= sum;
    }
    out.rows.push_back(std::move(noisy));
  }
  return out;
}

void FlipWorkloadSpec::validate() const {
  if (prompt_len == 0) throw ConfigError("flip workload needs a non-empty prompt");
  if (n_topics == 0 || topic_size == 0 || occurrences == 0) {
    throw ConfigError("flip workload needs topics");
  }
  const std::size_t topic_ids = n_topics * topic_size;
  if (topic_ids >= vocab) throw ConfigError("topic ids exhaust the vocabulary");
  if (topic_ids * occurrences > prompt_len) {
    throw ConfigError("topic occurrences do not fit in the prompt");
  }
  check_flips(flip_steps, decode_len);
}

FlipWorkload gen_flip_workload(const FlipWorkloadSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 3));
  const std::size_t topic_ids = spec.n_topics * spec.topic_size;
  std::uniform_int_distribution<int> background(static_cast<int>(topic_ids),
                                                static_cast<int>(spec.vocab) - 1);

  FlipWorkload out;
  out.prompt.resize(spec.prompt_len);
  for (int& t : out.prompt) t = background(rng);
  std::vector<std::size_t> slots(spec.prompt_len);
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  std::shuffle(slots.begin(), slots.end(), rng);
  std::size_t next = 0;
  for (std::size_t id = 0; id < topic_ids; ++id) {
    for (std::size_t k = 0; k < spec.occurrences; ++k) {
      out.prompt[slots[next++]] = static_cast<int>(id);
    }
  }

  std::uniform_int_distribution<std::size_t> pick(0, spec.topic_size - 1);
  out.continuation.reserve(spec.decode_len);
  for (std::size_t step = 1; step <= spec.decode_len; ++step) {
    const std::size_t topic = active_topic(spec.flip_steps, step, spec.n_topics);
    out.continuation.push_back(static_cast<int>(topic * spec.topic_size + pick(rng)));
  }
  return out;
}

}  // namespace smallkv
