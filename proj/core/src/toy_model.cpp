// SPDX-License-Identifier: Apache-2.0
#include "smallkv/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "smallkv/errors.hpp"
#include "smallkv/random.hpp"

namespace smallkv {
namespace {

void fill_normal(Matrix& m, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (double& x : m.data()) x = normal(rng);
}

// Child-seed tags.
enum : std::uint64_t {
  kContentStream = 1,
  kEmbedStream = 2,
  kHeadStream = 3,
  kPermStream = 4,
  kNoiseStream = 5,
};

}  // namespace

ToyModel ToyModel::generate(const ToyModelSpec& spec) {
  if (spec.layers == 0 || spec.heads == 0 || spec.head_dim == 0 || spec.vocab == 0 ||
      spec.content_dim == 0) {
    throw ConfigError("toy model dimensions must be positive");
  }
  if (std::abs(spec.self_match) > 1.0) {
    throw ConfigError("toy model self_match must lie in [-1, 1]");
  }
  ToyModel m;
  m.spec_ = spec;
  const std::size_t hidden = m.hidden_dim();
  const std::uint64_t family = spec.family_seed.value_or(spec.seed);

  Rng content_rng(derive_seed(family, kContentStream));
  m.content_ = Matrix(spec.vocab, spec.content_dim);
  fill_normal(m.content_, 1.0, content_rng);

  Rng embed_rng(derive_seed(spec.seed, kEmbedStream));
  m.embedding_ = Matrix(spec.vocab, hidden);
  fill_normal(m.embedding_, 1.0, embed_rng);
  m.unembed_ = Matrix(hidden, spec.vocab);
  fill_normal(m.unembed_, 1.0 / std::sqrt(static_cast<double>(hidden)), embed_rng);

  const double qk_std = spec.qk_gain / std::sqrt(static_cast<double>(spec.content_dim));
  const double mix = std::sqrt(1.0 - spec.self_match * spec.self_match);
  m.heads_.reserve(m.head_count());
  for (std::size_t flat = 0; flat < m.head_count(); ++flat) {
    Rng rng(derive_seed(derive_seed(spec.seed, kHeadStream), flat));
    HeadParams p;
    p.w_query = Matrix(spec.content_dim, spec.head_dim);
    fill_normal(p.w_query, qk_std, rng);
    Matrix independent(spec.content_dim, spec.head_dim);
    fill_normal(independent, qk_std, rng);
    p.w_key = Matrix(spec.content_dim, spec.head_dim);
    for (std::size_t i = 0; i < p.w_key.data().size(); ++i) {
      p.w_key.data()[i] = spec.self_match * p.w_query.data()[i] + mix * independent.data()[i];
    }
    p.w_value = Matrix(hidden, spec.head_dim);
    fill_normal(p.w_value, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    p.w_out = Matrix(spec.head_dim, hidden);
    fill_normal(p.w_out, spec.out_scale / std::sqrt(static_cast<double>(spec.head_dim)), rng);
    m.heads_.push_back(std::move(p));
  }
  return m;
}

ModelConfig ToyModel::config() const {
  return {"toy", spec_.layers, spec_.heads, spec_.heads, spec_.head_dim, hidden_dim(),
          spec_.vocab, 2};
}

std::size_t ToyModel::flat_index(HeadId id) const {
  if (id.layer >= spec_.layers || id.head >= spec_.heads) {
    throw RangeError("toy model has no head " + to_string(id));
  }
  return id.layer * spec_.heads + id.head;
}

void ToyModel::check_token(int token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= spec_.vocab) {
    throw RangeError("token " + std::to_string(token) + " outside the vocabulary");
  }
}

namespace {

std::vector<double> project(std::span<const double> x, const Matrix& w) {
  std::vector<double> out(w.cols(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double xr = x[r];
    const auto wr = w.row(r);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += xr * wr[c];
  }
  return out;
}

}  // namespace

std::vector<double> ToyModel::query(HeadId id, int token) const {
  check_token(token);
  return project(content_.row(static_cast<std::size_t>(token)), params(id).w_query);
}

std::vector<double> ToyModel::key(HeadId id, int token) const {
  check_token(token);
  return project(content_.row(static_cast<std::size_t>(token)), params(id).w_key);
}

std::vector<double> ToyModel::value(HeadId id, std::span<const double> hidden) const {
  if (hidden.size() != hidden_dim()) {
    throw DimensionError("toy model: hidden state width mismatch");
  }
  double ms = 0.0;
  for (double x : hidden) ms += x * x;
  const double inv = 1.0 / std::sqrt(ms / static_cast<double>(hidden.size()) + 1e-6);
  std::vector<double> normed(hidden.begin(), hidden.end());
  for (double& x : normed) x *= inv;
  return project(normed, params(id).w_value);
}

void ToyModel::write_output(HeadId id, std::span<const double> out,
                            std::span<double> hidden) const {
  const auto& w = params(id).w_out;
  if (out.size() != w.rows() || hidden.size() != w.cols()) {
    throw DimensionError("toy model: head output width mismatch");
  }
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto wr = w.row(r);
    for (std::size_t c = 0; c < hidden.size(); ++c) hidden[c] += out[r] * wr[c];
  }
}

std::vector<double> ToyModel::embed(int token) const {
  check_token(token);
  const auto row = embedding_.row(static_cast<std::size_t>(token));
  return {row.begin(), row.end()};
}

int ToyModel::greedy_token(std::span<const double> hidden) const {
  const auto logits = project(hidden, unembed_);
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

ToyRunner::ToyRunner(const ToyModel& model, bool keep_rows)
    : model_(&model),
      keep_rows_(keep_rows),
      keys_(model.head_count()),
      values_(model.head_count()),
      rows_(keep_rows ? model.head_count() : 0) {}

ToyRunner::Step ToyRunner::step(int token) {
  const auto& spec = model_->spec();
  const std::size_t d = spec.head_dim;
  tokens_.push_back(token);

  Step out;
  out.rows.resize(model_->head_count());
  out.outputs.resize(model_->head_count());

  std::vector<double> hidden = model_->embed(token);
  for (std::size_t layer = 0; layer < spec.layers; ++layer) {
    std::vector<double> next = hidden;
    for (std::size_t h = 0; h < spec.heads; ++h) {
      const HeadId id{layer, h};
      const std::size_t flat = model_->flat_index(id);
      const auto q = model_->query(id, token);
      const auto k = model_->key(id, token);
      const auto v = model_->value(id, hidden);
      keys_[flat].insert(keys_[flat].end(), k.begin(), k.end());
      values_[flat].insert(values_[flat].end(), v.begin(), v.end());

      auto row = attention_row(q, keys_[flat], d);
      auto o = attention_output(row, values_[flat], d);
      model_->write_output(id, o, next);
      if (keep_rows_) rows_[flat].push_back(row);
      out.rows[flat] = std::move(row);
      out.outputs[flat] = std::move(o);
    }
    hidden = std::move(next);
  }
  out.next_token = model_->greedy_token(hidden);
  return out;
}

AttentionMatrix ToyRunner::attention(std::size_t flat) const {
  if (!keep_rows_) {
    throw ConfigError("ToyRunner::attention needs keep_rows");
  }
  const auto& rows = rows_.at(flat);
  const std::size_t n = rows.size();
  Matrix w(n, n);
  for (std::size_t u = 0; u < n; ++u) {
    std::copy(rows[u].begin(), rows[u].end(), w.row(u).begin());
  }
  return AttentionMatrix(std::move(w), model_->head_id(flat));
}

std::vector<AttentionMatrix> forward_attention(const ToyModel& model,
                                               std::span<const int> tokens) {
  ToyRunner runner(model, true);
  for (int t : tokens) runner.step(t);
  std::vector<AttentionMatrix> out;
  out.reserve(model.head_count());
  for (std::size_t flat = 0; flat < model.head_count(); ++flat) {
    out.push_back(runner.attention(flat));
  }
  return out;
}

PlantedPair gen_planted_pair(const ToyModel& llm, std::size_t slm_layers, std::size_t slm_heads,
                             double noise_sigma, std::uint64_t seed) {
  if (slm_layers == 0 || slm_heads == 0) {
    throw ConfigError("planted SLM needs at least one layer and head");
  }
  const std::size_t slm_count = slm_layers * slm_heads;
  if (slm_count > llm.head_count()) {
    throw ConfigError("planted SLM has " + std::to_string(slm_count) + " heads but the LLM only " +
                      std::to_string(llm.head_count()));
  }
  if (noise_sigma < 0.0) {
    throw ConfigError("noise_sigma must be non-negative");
  }

  const auto& ls = llm.spec();
  ToyModelSpec spec = ls;
  spec.layers = slm_layers;
  spec.heads = slm_heads;
  spec.seed = derive_seed(seed, kEmbedStream);
  spec.family_seed = ls.family_seed.value_or(ls.seed);
  ToyModel slm = ToyModel::generate(spec);

  std::vector<std::size_t> perm(llm.head_count());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng perm_rng(derive_seed(seed, kPermStream));
  std::shuffle(perm.begin(), perm.end(), perm_rng);

  const double qk_std = ls.qk_gain / std::sqrt(static_cast<double>(ls.content_dim));
  std::vector<HeadMatch> planted;
  for (std::size_t j = 0; j < slm_count; ++j) {
    const HeadId src = llm.head_id(perm[j]);
    const HeadId dst = slm.head_id(j);
    Rng rng(derive_seed(derive_seed(seed, kNoiseStream), j));
    std::normal_distribution<double> normal(0.0, noise_sigma * qk_std);
    auto& p = slm.params(dst);
    p.w_query = llm.params(src).w_query;
    p.w_key = llm.params(src).w_key;
    if (noise_sigma > 0.0) {
      for (double& x : p.w_query.data()) x += normal(rng);
      for (double& x : p.w_key.data()) x += normal(rng);
    }
    planted.push_back({src, dst, 1.0});
  }
  return {llm, std::move(slm), HeadMap(std::move(planted), {}, 0), noise_sigma};
}

}  // namespace smallkv
