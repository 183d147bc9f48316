// SPDX-License-Identifier: Apache-2.0
#include "smallkv/scenario.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string_view>

#include <nlohmann/json.hpp>

#include "smallkv/errors.hpp"

namespace smallkv {

using nlohmann::json;

std::string ablation_name(AblationFlags flags) {
  if (flags.disable_marginal && flags.disable_saliency) return "no-both";
  if (flags.disable_marginal) return "no-marginal";
  if (flags.disable_saliency) return "no-saliency";
  return "none";
}

AblationFlags parse_ablation(const std::string& name) {
  if (name == "none") return {};
  if (name == "no-marginal") return {true, false};
  if (name == "no-saliency") return {false, true};
  if (name == "no-both") return {true, true};
  throw ConfigError("unknown ablation '" + name +
                    "' (expected none, no-marginal, no-saliency or no-both)");
}

void SimOptions::validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) throw BudgetError("budget must be in (0,1]");
  if (compress_every == 0) throw ConfigError("compress_every must be positive");
  if (match_min == 0 || match_min > match_max) {
    throw ConfigError("matching window needs 0 < min <= max");
  }
  if (ratio.critical <= 0.0 || ratio.recent < 0.0 || ratio.marginal < 0.0) {
    throw ConfigError("budget ratio needs a positive critical share");
  }
}

namespace {

void check_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) {
    throw ParseError("scenario: '" + std::string(where) + "' must be an object");
  }
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) {
      throw ParseError("scenario: unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

Scenario Scenario::from_json(const std::string& text) {
  Scenario s;
  try {
    const json doc = json::parse(text);
    check_keys(doc, "scenario",
               {"name", "seed", "llm", "slm", "tau", "ratio", "critical_floor", "ablation",
                "compress_every", "match", "workload", "stream", "budgets"});
    read(doc, "name", s.name);
    read(doc, "seed", s.seed);
    if (doc.contains("llm")) {
      const auto& m = doc.at("llm");
      check_keys(m, "llm",
                 {"layers", "heads", "head_dim", "vocab", "content_dim", "qk_gain", "self_match",
                  "out_scale"});
      read(m, "layers", s.llm.layers);
      read(m, "heads", s.llm.heads);
      read(m, "head_dim", s.llm.head_dim);
      read(m, "vocab", s.llm.vocab);
      read(m, "content_dim", s.llm.content_dim);
      read(m, "qk_gain", s.llm.qk_gain);
      read(m, "self_match", s.llm.self_match);
      read(m, "out_scale", s.llm.out_scale);
    }
    if (doc.contains("slm")) {
      const auto& m = doc.at("slm");
      check_keys(m, "slm", {"layers", "heads", "noise_sigma"});
      read(m, "layers", s.slm_layers);
      read(m, "heads", s.slm_heads);
      read(m, "noise_sigma", s.noise_sigma);
    }
    read(doc, "tau", s.options.tau);
    if (doc.contains("ratio")) {
      const auto r = doc.at("ratio").get<std::vector<double>>();
      if (r.size() != 3) throw ParseError("scenario: ratio needs three entries");
      s.options.ratio = {r[0], r[1], r[2]};
    }
    read(doc, "critical_floor", s.options.critical_floor);
    if (doc.contains("ablation")) {
      s.options.flags = parse_ablation(doc.at("ablation").get<std::string>());
    }
    read(doc, "compress_every", s.options.compress_every);
    if (doc.contains("match")) {
      const auto& m = doc.at("match");
      check_keys(m, "match", {"min", "max", "topk"});
      read(m, "min", s.options.match_min);
      read(m, "max", s.options.match_max);
      read(m, "topk", s.options.match_topk);
    }
    if (doc.contains("workload")) {
      const auto& w = doc.at("workload");
      check_keys(w, "workload",
                 {"prompt_len", "decode_len", "n_topics", "topic_size", "occurrences",
                  "flip_steps", "forced"});
      read(w, "prompt_len", s.workload.prompt_len);
      read(w, "decode_len", s.workload.decode_len);
      read(w, "n_topics", s.workload.n_topics);
      read(w, "topic_size", s.workload.topic_size);
      read(w, "occurrences", s.workload.occurrences);
      read(w, "flip_steps", s.workload.flip_steps);
      read(w, "forced", s.forced);
    }
    if (doc.contains("stream")) {
      const auto& w = doc.at("stream");
      check_keys(w, "stream",
                 {"prompt_len", "decode_len", "n_topics", "topic_size", "flip_steps",
                  "topic_mass", "latent_decay", "noise"});
      read(w, "prompt_len", s.stream.prompt_len);
      read(w, "decode_len", s.stream.decode_len);
      read(w, "n_topics", s.stream.n_topics);
      read(w, "topic_size", s.stream.topic_size);
      read(w, "flip_steps", s.stream.flip_steps);
      read(w, "topic_mass", s.stream.topic_mass);
      read(w, "latent_decay", s.stream.latent_decay);
      read(w, "noise", s.stream_noise);
    }
    read(doc, "budgets", s.budgets);
  } catch (const json::exception& e) {
    throw ParseError(std::string("scenario: ") + e.what());
  }
  s.stream.seed = s.seed;
  s.workload.vocab = s.llm.vocab;
  return s;
}

Scenario Scenario::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return from_json(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string Scenario::to_json() const {
  json doc;
  doc["name"] = name;
  doc["seed"] = seed;
  doc["llm"] = {{"layers", llm.layers},           {"heads", llm.heads},
                {"head_dim", llm.head_dim},       {"vocab", llm.vocab},
                {"content_dim", llm.content_dim}, {"qk_gain", llm.qk_gain},
                {"self_match", llm.self_match},   {"out_scale", llm.out_scale}};
  doc["slm"] = {{"layers", slm_layers}, {"heads", slm_heads}, {"noise_sigma", noise_sigma}};
  doc["tau"] = options.tau;
  doc["ratio"] = {options.ratio.critical, options.ratio.recent, options.ratio.marginal};
  doc["critical_floor"] = options.critical_floor;
  doc["ablation"] = ablation_name(options.flags);
  doc["compress_every"] = options.compress_every;
  doc["match"] = {{"min", options.match_min}, {"max", options.match_max}, {"topk", options.match_topk}};
  doc["workload"] = {{"prompt_len", workload.prompt_len},
                     {"decode_len", workload.decode_len},
                     {"n_topics", workload.n_topics},
                     {"topic_size", workload.topic_size},
                     {"occurrences", workload.occurrences},
                     {"flip_steps", workload.flip_steps},
                     {"forced", forced}};
  doc["stream"] = {{"prompt_len", stream.prompt_len}, {"decode_len", stream.decode_len},
                   {"n_topics", stream.n_topics},     {"topic_size", stream.topic_size},
                   {"flip_steps", stream.flip_steps}, {"topic_mass", stream.topic_mass},
                   {"latent_decay", stream.latent_decay}, {"noise", stream_noise}};
  doc["budgets"] = budgets;
  return doc.dump(2) + "\n";
}

}  // namespace smallkv
