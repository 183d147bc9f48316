// SPDX-License-Identifier: Apache-2.0
#include "smallkv/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "smallkv/errors.hpp"
#include "smallkv/random.hpp"

namespace smallkv {

std::uint64_t llm_seed(std::uint64_t scenario_seed) { return derive_seed(scenario_seed, 1); }
std::uint64_t planted_seed(std::uint64_t scenario_seed) { return derive_seed(scenario_seed, 4); }
std::uint64_t workload_seed(std::uint64_t scenario_seed) { return derive_seed(scenario_seed, 3); }

SimState::SimState(const ToyModel& llm_model, const ToyModel& slm_model, SimOptions opts)
    : llm(&llm_model),
      slm(&slm_model),
      options(opts),
      slm_runner(slm_model),
      shadow(llm_model),
      store(llm_model.spec().layers, llm_model.spec().heads, llm_model.spec().head_dim),
      slm_scores(slm_model.head_count()),
      global_scores(llm_model.head_count()),
      view_scores(llm_model.head_count()),
      alive(llm_model.head_count()),
      slm_rows(slm_model.head_count()),
      llm_rows(llm_model.head_count()),
      decisions(llm_model.head_count()) {
  if (llm_model.spec().vocab != slm_model.spec().vocab) {
    throw ConfigError("LLM and SLM must share a vocabulary");
  }
}

namespace {

BudgetRatio effective_ratio(const SimOptions& o) {
  BudgetRatio r = o.ratio;
  if (o.flags.disable_marginal) r.marginal = 0.0;
  return r;
}

std::uint64_t token_bytes(const ModelConfig& cfg) { return kv_cache_bytes(cfg, 1, 1); }

AttentionMatrix rows_to_matrix(const std::vector<std::vector<double>>& rows, HeadId id) {
  const std::size_t n = rows.size();
  Matrix w(n, n);
  for (std::size_t u = 0; u < n; ++u) {
    std::copy(rows[u].begin(), rows[u].end(), w.row(u).begin());
  }
  return AttentionMatrix(std::move(w), id);
}

RetainDecision keep_everything(std::size_t n) {
  return {IndexSet::range(0, n), {}, {}, {}, n};
}

void record_rows(SimState& s, const ToyRunner::Step& slm_step, const ToyRunner::Step& llm_step) {
  for (std::size_t j = 0; j < slm_step.rows.size(); ++j) s.slm_rows[j].push_back(slm_step.rows[j]);
  for (std::size_t f = 0; f < llm_step.rows.size(); ++f) s.llm_rows[f].push_back(llm_step.rows[f]);
}

// Establishes the head map once the context is long enough. Returns true when
// matching happened during this call.
bool try_match(SimState& s) {
  if (!s.deferred) return false;
  const std::size_t n = s.tokens.size();
  const auto wd = matching_window(n, s.options.match_min, s.options.match_max);
  if (wd.defer) return false;

  const std::size_t k = s.options.match_topk != 0
                            ? std::min(s.options.match_topk, wd.window.length())
                            : default_match_topk(wd.window.length());
  std::vector<HeadScores> llm_heads;
  std::vector<HeadScores> slm_heads;
  for (std::size_t f = 0; f < s.llm->head_count(); ++f) {
    const HeadId id = s.llm->head_id(f);
    llm_heads.push_back({id, window_scores(rows_to_matrix(s.llm_rows[f], id), wd.window)});
  }
  for (std::size_t j = 0; j < s.slm->head_count(); ++j) {
    const HeadId id = s.slm->head_id(j);
    slm_heads.push_back({id, window_scores(rows_to_matrix(s.slm_rows[j], id), wd.window)});
  }
  s.head_map = match_heads(llm_heads, slm_heads, k, wd.window);
  s.deferred = false;
  s.llm_rows.assign(s.llm_rows.size(), {});
  s.slm_rows.assign(s.slm_rows.size(), {});
  return true;
}

std::size_t matched_slm(const SimState& s, std::size_t flat) {
  return s.slm->flat_index(s.head_map->at(s.llm->head_id(flat)).slm);
}

RetainDecision decide(SimState& s, std::size_t flat) {
  const std::size_t n = s.tokens.size();
  const BudgetPlan plan =
      allocate_budget(s.options.tau, n, effective_ratio(s.options), s.options.critical_floor);
  if (!s.options.flags.disable_saliency) {
    return smallkv_retain(s.slm_scores[matched_slm(s, flat)], plan);
  }
  auto decision = evict_among(s.view_scores[flat], plan, s.alive[flat]);
  for (std::size_t pos : decision.evicted) s.alive[flat][pos] = false;
  return decision;
}

void apply(SimState& s, std::size_t flat) {
  const HeadId id = s.llm->head_id(flat);
  auto log = s.store.apply_plan(s.decisions[flat], id.layer, id.head);
  if (s.options.log_migrations) {
    s.migrations.insert(s.migrations.end(), log.begin(), log.end());
  }
}

}  // namespace

SimState prefill(const ToyModel& llm, const ToyModel& slm, std::span<const int> prompt,
                 const SimOptions& options) {
  if (prompt.empty()) throw ConfigError("prompt must be non-empty");
  options.validate();
  SimState s(llm, slm, options);

  for (int token : prompt) {
    const auto slm_step = s.slm_runner.step(token);
    const auto llm_step = s.shadow.step(token);
    for (std::size_t j = 0; j < slm.head_count(); ++j) s.slm_scores[j].accumulate(slm_step.rows[j]);
    for (std::size_t f = 0; f < llm.head_count(); ++f) {
      s.global_scores[f].accumulate(llm_step.rows[f]);
      s.view_scores[f].accumulate(llm_step.rows[f]);
    }
    record_rows(s, slm_step, llm_step);
    s.tokens.push_back(token);
    s.pending_token = llm_step.next_token;
  }

  const std::size_t n = prompt.size();
  const std::size_t d = llm.spec().head_dim;
  for (std::size_t f = 0; f < llm.head_count(); ++f) {
    const HeadId id = llm.head_id(f);
    const auto keys = s.shadow.keys(f);
    const auto values = s.shadow.values(f);
    for (std::size_t pos = 0; pos < n; ++pos) {
      s.store.append(id.layer, id.head, keys.subspan(pos * d, d), values.subspan(pos * d, d));
    }
    s.alive[f].assign(n, true);
  }

  try_match(s);
  for (std::size_t f = 0; f < llm.head_count(); ++f) {
    s.decisions[f] = s.deferred ? keep_everything(n) : decide(s, f);
    apply(s, f);
  }

  const auto cfg = llm.config();
  s.prefill_metrics.context_len = n;
  s.prefill_metrics.deferred = s.deferred;
  s.prefill_metrics.match_similarity = s.head_map ? s.head_map->mean_similarity() : 0.0;
  s.prefill_metrics.hot_bytes = hot_bytes(s.store, cfg);
  s.prefill_metrics.full_bytes = kv_cache_bytes(cfg, n, 1);
  return s;
}

StepMetrics decode_step(SimState& s, std::optional<int> forced) {
  const ToyModel& llm = *s.llm;
  const int token = forced.value_or(s.pending_token);
  const auto slm_step = s.slm_runner.step(token);
  const auto shadow_step = s.shadow.step(token);
  s.tokens.push_back(token);
  const std::size_t n = s.tokens.size();
  ++s.steps_done;

  for (std::size_t j = 0; j < s.slm->head_count(); ++j) {
    s.slm_scores[j].accumulate(slm_step.rows[j]);
  }
  for (std::size_t f = 0; f < llm.head_count(); ++f) {
    s.global_scores[f].accumulate(shadow_step.rows[f]);
    s.view_scores[f].accumulate(std::vector<double>(n, 0.0));
    s.alive[f].push_back(true);
  }
  if (s.deferred) record_rows(s, slm_step, shadow_step);

  const bool matched_now = try_match(s);
  const bool refresh = matched_now || s.steps_done % s.options.compress_every == 0;
  for (std::size_t f = 0; f < llm.head_count(); ++f) {
    if (s.deferred) {
      s.decisions[f] = keep_everything(n);
    } else if (refresh) {
      s.decisions[f] = decide(s, f);
    } else {
      auto& prev = s.decisions[f];
      std::vector<std::size_t> recent(prev.recent.begin(), prev.recent.end());
      recent.push_back(n - 1);
      prev.recent = IndexSet(std::move(recent));
      prev.context_len = n;
    }
  }

  StepMetrics m;
  m.step = s.steps_done;
  m.context_len = n;
  m.token = token;
  m.deferred = s.deferred;

  const std::size_t d = llm.spec().head_dim;
  std::vector<double> hidden = llm.embed(token);
  double sq = 0.0;
  for (std::size_t layer = 0; layer < llm.spec().layers; ++layer) {
    std::vector<double> next = hidden;
    for (std::size_t h = 0; h < llm.spec().heads; ++h) {
      const HeadId id{layer, h};
      const std::size_t f = llm.flat_index(id);
      const auto q = llm.query(id, token);
      const auto k = llm.key(id, token);
      const auto v = llm.value(id, hidden);
      s.store.append(layer, h, k, v);
      apply(s, f);

      const auto& decision = s.decisions[f];
      const auto row = attention_row(q, s.store.keys(layer, h), d);
      std::span<const double> slm_row;
      if (!decision.marginal.empty()) slm_row = slm_step.rows[matched_slm(s, f)];
      const auto crow = build_compensated_row(row, slm_row, decision);
      const auto out = compensated_output(crow, d, [&](std::size_t pos) {
        return s.store.resident_value(layer, h, pos);
      });

      const auto dense = crow.dense();
      double mass = 0.0;
      for (std::size_t pos = 0; pos < n; ++pos) {
        if (s.alive[f][pos]) mass += dense[pos];
      }
      std::vector<double> seen(n, 0.0);
      if (mass > 0.0) {
        for (std::size_t pos = 0; pos < n; ++pos) {
          if (s.alive[f][pos]) seen[pos] = dense[pos] / mass;
        }
      }
      s.view_scores[f].accumulate(seen);

      const auto& ref = shadow_step.outputs[f];
      for (std::size_t c = 0; c < d; ++c) sq += (out[c] - ref[c]) * (out[c] - ref[c]);
      llm.write_output(id, out, next);
    }
    hidden = std::move(next);
  }
  s.pending_token = llm.greedy_token(hidden);
  m.mse = sq / static_cast<double>(llm.head_count() * d);

  if (s.deferred) {
    m.jaccard = 1.0;
  } else {
    const BudgetPlan plan =
        allocate_budget(s.options.tau, n, effective_ratio(s.options), s.options.critical_floor);
    double sum = 0.0;
    for (std::size_t f = 0; f < llm.head_count(); ++f) {
      sum += jaccard(s.decisions[f].critical, evict(s.global_scores[f], plan).critical);
    }
    m.jaccard = sum / static_cast<double>(llm.head_count());
  }

  const auto cfg = llm.config();
  m.hot_bytes = hot_bytes(s.store, cfg);
  m.counted_bytes = hot_bytes(s.store.entries(), cfg);
  m.full_bytes = kv_cache_bytes(cfg, n, 1);
  if (s.deferred) {
    m.budget_bytes = m.full_bytes;
  } else {
    const auto scaled = static_cast<std::uint64_t>(
        std::floor(s.options.tau * static_cast<double>(m.full_bytes)));
    m.budget_bytes = scaled + s.options.compress_every * token_bytes(cfg);
  }
  return m;
}

double SimReport::mean_mse() const noexcept {
  if (steps.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : steps) sum += s.mse;
  return sum / static_cast<double>(steps.size());
}

double SimReport::final_jaccard() const noexcept {
  return steps.empty() ? 1.0 : steps.back().jaccard;
}

std::uint64_t SimReport::peak_hot_bytes() const noexcept {
  std::uint64_t peak = prefill.hot_bytes;
  for (const auto& s : steps) peak = std::max(peak, s.hot_bytes);
  return peak;
}

std::string SimReport::steps_csv() const {
  std::ostringstream os;
  os.precision(std::numeric_limits<double>::max_digits10);
  os << "step,context_len,token,mse,jaccard,hot_bytes,counted_bytes,budget_bytes,full_bytes,"
        "deferred\n";
  for (const auto& s : steps) {
    os << s.step << ',' << s.context_len << ',' << s.token << ',' << s.mse << ',' << s.jaccard
       << ',' << s.hot_bytes << ',' << s.counted_bytes << ',' << s.budget_bytes << ','
       << s.full_bytes << ',' << (s.deferred ? 1 : 0) << '\n';
  }
  return os.str();
}

std::string SimReport::migrations_csv() const {
  std::ostringstream os;
  os << "layer,kv_head,token_pos,half,from,to\n";
  for (const auto& m : migrations) {
    os << m.layer << ',' << m.kv_head << ',' << m.token_pos << ',' << to_string(m.half) << ','
       << to_string(m.from) << ',' << to_string(m.to) << '\n';
  }
  return os.str();
}

std::string SimReport::summary_json() const {
  nlohmann::json j;
  j["scenario"] = nlohmann::json::parse(scenario.to_json());
  j["ablation"] = ablation_name(scenario.options.flags);
  j["decode_steps"] = steps.size();
  j["mean_mse"] = mean_mse();
  j["final_jaccard"] = final_jaccard();
  j["peak_hot_bytes"] = peak_hot_bytes();
  j["prefill"] = {{"context_len", prefill.context_len},
                  {"deferred", prefill.deferred},
                  {"match_similarity", prefill.match_similarity},
                  {"hot_bytes", prefill.hot_bytes},
                  {"full_bytes", prefill.full_bytes}};
  return j.dump(2) + "\n";
}

std::string SimReport::summary_line() const {
  std::ostringstream os;
  os.precision(6);
  os << "mean_mse=" << mean_mse() << " final_jaccard=" << final_jaccard()
     << " peak_hot_bytes=" << peak_hot_bytes();
  return os.str();
}

SimReport run(const Scenario& scenario) {
  scenario.options.validate();
  ToyModelSpec llm_spec = scenario.llm;
  llm_spec.seed = llm_seed(scenario.seed);
  const ToyModel llm = ToyModel::generate(llm_spec);
  const PlantedPair pair = gen_planted_pair(llm, scenario.slm_layers, scenario.slm_heads,
                                            scenario.noise_sigma, planted_seed(scenario.seed));

  FlipWorkloadSpec wl = scenario.workload;
  wl.seed = workload_seed(scenario.seed);
  wl.vocab = llm_spec.vocab;
  const FlipWorkload workload = gen_flip_workload(wl);

  SimReport report;
  report.scenario = scenario;
  SimState state = prefill(pair.llm, pair.slm, workload.prompt, scenario.options);
  report.prefill = state.prefill_metrics;
  report.steps.reserve(wl.decode_len);
  for (std::size_t i = 0; i < wl.decode_len; ++i) {
    const auto forced = scenario.forced ? std::optional<int>(workload.continuation[i]) : std::nullopt;
    report.steps.push_back(decode_step(state, forced));
  }
  report.migrations = std::move(state.migrations);
  return report;
}

}  // namespace smallkv
