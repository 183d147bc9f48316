// SPDX-License-Identifier: Apache-2.0
#include "smallkv_cli/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "smallkv/compensation.hpp"
#include "smallkv/errors.hpp"
#include "smallkv/eviction.hpp"
#include "smallkv/kvstore.hpp"
#include "smallkv/matching.hpp"
#include "smallkv/simulator.hpp"
#include "smallkv/traceio.hpp"
#include "smallkv/workload.hpp"

namespace smallkv::cli {
namespace {

namespace fs = std::filesystem;

// Bad flag values that CLI11 cannot see on its own.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::ostream& precise(std::ostream& os) {
  os.precision(std::numeric_limits<double>::max_digits10);
  return os;
}

ModelConfig load_model(const std::string& name_or_path) {
  if (auto preset = model_preset(name_or_path)) return *preset;
  std::ifstream in(name_or_path);
  if (!in) {
    throw UsageError("'" + name_or_path +
                     "' is neither a preset (qwen2-7b, qwen2-72b) nor a readable file");
  }
  ModelConfig c;
  try {
    const auto doc = nlohmann::json::parse(in);
    c.name = doc.value("name", fs::path(name_or_path).stem().string());
    c.layers = doc.at("layers").get<std::size_t>();
    c.attn_heads = doc.at("attn_heads").get<std::size_t>();
    c.kv_heads = doc.at("kv_heads").get<std::size_t>();
    c.head_dim = doc.at("head_dim").get<std::size_t>();
    c.hidden_dim = doc.at("hidden_dim").get<std::size_t>();
    c.vocab = doc.at("vocab").get<std::size_t>();
    c.bytes_per_value = doc.value("bytes_per_value", std::size_t{2});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(name_or_path + ": " + e.what());
  }
  c.validate();
  return c;
}

struct SimulateArgs {
  std::string config;
  std::optional<double> tau;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> ablation;
  std::string out;
  bool log_migrations = false;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  if (a.tau && !(*a.tau > 0.0 && *a.tau <= 1.0)) throw UsageError("budget must be in (0,1]");
  Scenario s = Scenario::load(a.config);
  if (a.tau) s.options.tau = *a.tau;
  if (a.seed) s.seed = *a.seed;
  if (a.ablation) {
    try {
      s.options.flags = parse_ablation(*a.ablation);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  s.options.log_migrations = a.log_migrations;
  const SimReport report = run(s);
  if (!a.out.empty()) {
    const fs::path dir(a.out);
    write_file(dir / "steps.csv", report.steps_csv());
    write_file(dir / "summary.json", report.summary_json());
    if (a.log_migrations) write_file(dir / "migrations.csv", report.migrations_csv());
  }
  out << report.summary_line() << '\n';
  return kExitOk;
}

struct MatchArgs {
  std::string trace_a;
  std::string trace_b;
  std::size_t topk = 0;
  std::size_t window = kMatchWindowMax;
  std::string out;
};

int cmd_match(const MatchArgs& a, std::ostream& out) {
  const TraceBundle llm = read_trace(a.trace_a);
  const TraceBundle slm = read_trace(a.trace_b);
  const std::size_t n = llm.manifest.tokens;
  if (slm.manifest.tokens != n) {
    throw ValidationError("traces differ in token count: " + std::to_string(n) + " vs " +
                          std::to_string(slm.manifest.tokens));
  }
  if (a.window == 0) throw UsageError("--window must be positive");
  const std::size_t len = std::min(n, a.window);
  const MatchWindow window{n - len, n};
  const std::size_t k = a.topk ? std::min(a.topk, len) : default_match_topk(len);

  const auto llm_scores = bundle_head_scores(llm, window);
  const auto slm_scores = bundle_head_scores(slm, window);
  const HeadMap map = match_heads(llm_scores, slm_scores, k, window);

  std::size_t above_09 = 0;
  std::size_t above_08 = 0;
  double cos_sum = 0.0;
  for (std::size_t f = 0; f < llm_scores.size(); ++f) {
    const auto& m = map.at(llm_scores[f].id);
    if (m.similarity > 0.9) ++above_09;
    if (m.similarity > 0.8) ++above_08;
    const std::size_t j = m.slm.layer * slm.manifest.heads_per_layer + m.slm.head;
    cos_sum += cosine(llm_scores[f].scores, slm_scores[j].scores);
  }
  const double heads = static_cast<double>(llm_scores.size());
  if (!a.out.empty()) write_file(a.out, map.to_json());
  out << "heads,topk,window,frac_above_0.9,frac_above_0.8,mean_similarity,mean_cosine\n";
  precise(out) << llm_scores.size() << ',' << k << ',' << len << ','
               << static_cast<double>(above_09) / heads << ','
               << static_cast<double>(above_08) / heads << ',' << map.mean_similarity() << ','
               << cos_sum / heads << '\n';
  return kExitOk;
}

struct SaliencyArgs {
  std::string config;
  std::vector<double> budgets;
  bool budgets_given = false;
  std::size_t every = 1;
  std::string out;
};

int cmd_saliency(const SaliencyArgs& a, std::ostream& out) {
  const Scenario s = Scenario::load(a.config);
  const std::vector<double> budgets = a.budgets_given ? a.budgets : s.budgets;
  if (budgets.empty()) throw UsageError("budget list is empty");
  for (double b : budgets) {
    if (!(b > 0.0 && b <= 1.0)) throw UsageError("budget must be in (0,1]");
  }
  if (a.every == 0) throw UsageError("--every must be positive");
  const auto stream = gen_saliency_stream(s.stream);
  const auto assistant = perturb_stream(stream.rows, s.stream_noise, s.seed);

  std::ostringstream table;
  precise(table);
  table << "budget,step,jaccard,assisted_jaccard\n";
  std::ostringstream means;
  means.precision(4);
  for (double b : budgets) {
    const auto drop = real_drop_simulate(stream.rows, b, a.every);
    const auto assisted = assisted_simulate(stream.rows, assistant, b, a.every);
    double sum_drop = 0.0;
    double sum_assisted = 0.0;
    for (std::size_t i = 0; i < drop.checkpoints.size(); ++i) {
      const auto& c = drop.checkpoints[i];
      table << b << ',' << c.step << ',' << c.jaccard << ',' << assisted.checkpoints[i].jaccard
            << '\n';
      sum_drop += c.jaccard;
      sum_assisted += assisted.checkpoints[i].jaccard;
    }
    const double count = std::max<double>(1.0, static_cast<double>(drop.checkpoints.size()));
    means << "budget=" << b << " mean_jaccard=" << sum_drop / count
          << " assisted_mean_jaccard=" << sum_assisted / count << '\n';
  }
  if (a.out.empty()) {
    out << table.str();
  } else {
    write_file(a.out, table.str());
    out << means.str();
  }
  return kExitOk;
}

struct CostArgs {
  std::string config_a = "qwen2-7b";
  std::string config_b = "qwen2-72b";
  std::size_t seq_len = 2048;
  std::size_t batch = 64;
  std::size_t sim_len = 200;
};

int cmd_cost(const CostArgs& a, std::ostream& out) {
  const ModelConfig ma = load_model(a.config_a);
  const ModelConfig mb = load_model(a.config_b);
  const CostReport ra = cost_report(ma, mb, a.seq_len, a.batch, a.sim_len);
  const CostReport rb = cost_report(mb, ma, a.seq_len, a.batch, a.sim_len);
  const auto ratio = [](double x, double y) {
    return x == 0.0 ? std::numeric_limits<double>::quiet_NaN() : y / x;
  };
  precise(out) << "metric," << ma.name << ',' << mb.name << ",ratio\n";
  out << "kv_bytes," << ra.kv_bytes << ',' << rb.kv_bytes << ','
      << ratio(static_cast<double>(ra.kv_bytes), static_cast<double>(rb.kv_bytes)) << '\n';
  out << "model_flops," << ra.model_flops << ',' << rb.model_flops << ','
      << ratio(ra.model_flops, rb.model_flops) << '\n';
  out << "model_flops_approx," << ra.model_flops_approx << ',' << rb.model_flops_approx << ','
      << ratio(ra.model_flops_approx, rb.model_flops_approx) << '\n';
  out << "matching_flops," << ra.matching_flops << ',' << rb.matching_flops << ','
      << ratio(ra.matching_flops, rb.matching_flops) << '\n';
  return kExitOk;
}

int cmd_validate(const std::string& dir, std::ostream& out) {
  const TraceBundle bundle = load_trace(dir);
  const ValidationReport report = validate(bundle);
  out << report.to_csv();
  for (const auto& p : report.problems) out << "# problem: " << p << '\n';
  out << "# " << (report.ok() ? "ok" : "invalid") << ": heads=" << report.heads.size()
      << " causality_violations=" << report.total_causality_violations()
      << " nan=" << report.total_nan() << " max_row_deviation=" << report.max_row_deviation()
      << '\n';
  return report.ok() ? kExitOk : kExitRuntime;
}

struct BoundArgs {
  BoundConfig config;
  std::vector<double> sigmas{0.01, 0.05, 0.1};
};

int cmd_bound(const BoundArgs& a, std::ostream& out) {
  if (a.sigmas.empty()) throw UsageError("sigma list is empty");
  out << "sigma,n,trials,marginal_fraction,observed_mse,bound,violations,holds\n";
  bool all = true;
  for (double sigma : a.sigmas) {
    BoundConfig c = a.config;
    c.sigma = sigma;
    const BoundReport r = verify_bound(c);
    all = all && r.holds();
    out << sigma << ',' << c.n << ',' << r.trials << ',' << c.marginal_fraction << ','
        << std::setprecision(17) << r.observed_mse << ',' << r.bound << std::setprecision(6)
        << ',' << r.violations << ',' << (r.holds() ? "true" : "false") << '\n';
  }
  return all ? kExitOk : kExitRuntime;
}

struct TraceArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_trace(const TraceArgs& a, std::ostream& out) {
  Scenario s = Scenario::load(a.config);
  if (a.seed) s.seed = *a.seed;
  ToyModelSpec spec = s.llm;
  spec.seed = llm_seed(s.seed);
  const ToyModel llm = ToyModel::generate(spec);
  const PlantedPair pair =
      gen_planted_pair(llm, s.slm_layers, s.slm_heads, s.noise_sigma, planted_seed(s.seed));
  FlipWorkloadSpec wl = s.workload;
  wl.seed = workload_seed(s.seed);
  wl.vocab = spec.vocab;
  const auto workload = gen_flip_workload(wl);
  const fs::path dir(a.out);
  write_trace(toy_trace(pair.llm, workload.prompt, s.name + "-llm"), dir / "llm");
  write_trace(toy_trace(pair.slm, workload.prompt, s.name + "-slm"), dir / "slm");
  write_file(dir / "planted_map.json", pair.planted_map.to_json());
  out << "wrote " << (dir / "llm").string() << " and " << (dir / "slm").string() << " ("
      << workload.prompt.size() << " tokens)\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"smallkv: small-model-assisted KV-cache compression simulator"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a scenario end to end");
  simulate->add_option("config", sim.config, "Scenario JSON file")->required();
  simulate->add_option("--tau", sim.tau, "KV cache budget fraction in (0,1]");
  simulate->add_option("--seed", sim.seed, "Override the scenario seed");
  simulate->add_option("--ablation", sim.ablation, "none, no-marginal, no-saliency or no-both");
  simulate->add_option("--out", sim.out, "Directory for steps.csv and summary.json");
  simulate->add_flag("--log-migrations", sim.log_migrations, "Also write migrations.csv");

  MatchArgs match;
  auto* match_cmd = app.add_subcommand("match", "Match the heads of two attention traces");
  match_cmd->add_option("trace_a", match.trace_a, "Trace of the large model")->required();
  match_cmd->add_option("trace_b", match.trace_b, "Trace of the small model")->required();
  match_cmd->add_option("--topk", match.topk, "TopK size (default max(16, 20% of window))");
  match_cmd->add_option("--window", match.window, "Match over the last N tokens")
      ->capture_default_str();
  match_cmd->add_option("--out", match.out, "Write the head map JSON here");

  SaliencyArgs sal;
  auto* saliency = app.add_subcommand("saliency", "Real-drop vs. global Jaccard trajectories");
  saliency->add_option("scenario", sal.config, "Scenario JSON file")->required();
  auto* budgets_opt =
      saliency->add_option("--budgets", sal.budgets, "Comma-separated budgets")->delimiter(',');
  saliency->add_option("--every", sal.every, "Compression cadence in decode steps")
      ->capture_default_str();
  saliency->add_option("--out", sal.out, "Write the trajectory CSV here");

  CostArgs cost;
  auto* cost_cmd = app.add_subcommand("cost", "KV-cache bytes and flops of two model configs");
  cost_cmd->add_option("--config-a", cost.config_a, "Preset name or model JSON")
      ->capture_default_str();
  cost_cmd->add_option("--config-b", cost.config_b, "Preset name or model JSON")
      ->capture_default_str();
  cost_cmd->add_option("--S", cost.seq_len, "Sequence length")->capture_default_str();
  cost_cmd->add_option("--B", cost.batch, "Batch size")->capture_default_str();
  cost_cmd->add_option("--S-sim", cost.sim_len, "Matching window length")->capture_default_str();

  std::string validate_dir;
  auto* validate_cmd = app.add_subcommand("validate", "Check an attention trace bundle");
  validate_cmd->add_option("dir", validate_dir, "Trace directory")->required();

  BoundArgs bound;
  auto* bound_cmd = app.add_subcommand("bound", "Monte-Carlo check of the compensation error bound");
  bound_cmd->add_option("--n", bound.config.n, "Context length")->capture_default_str();
  bound_cmd->add_option("--sigma", bound.sigmas, "Comma-separated noise scales")
      ->delimiter(',')
      ->capture_default_str();
  bound_cmd->add_option("--trials", bound.config.trials, "Trials per sigma")->capture_default_str();
  bound_cmd->add_option("--seed", bound.config.seed, "Seed")->capture_default_str();
  bound_cmd->add_option("--head-dim", bound.config.head_dim, "Value width")->capture_default_str();
  bound_cmd->add_option("--marginal-fraction", bound.config.marginal_fraction,
                        "Share of tokens in the marginal band")
      ->capture_default_str();

  TraceArgs trace;
  auto* trace_cmd = app.add_subcommand("trace", "Export toy LLM/SLM traces of a scenario prompt");
  trace_cmd->add_option("scenario", trace.config, "Scenario JSON file")->required();
  trace_cmd->add_option("--out", trace.out, "Output directory")->required();
  trace_cmd->add_option("--seed", trace.seed, "Override the scenario seed");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(sim, out);
    if (match_cmd->parsed()) return cmd_match(match, out);
    if (saliency->parsed()) {
      sal.budgets_given = budgets_opt->count() > 0;
      return cmd_saliency(sal, out);
    }
    if (cost_cmd->parsed()) return cmd_cost(cost, out);
    if (validate_cmd->parsed()) return cmd_validate(validate_dir, out);
    if (bound_cmd->parsed()) return cmd_bound(bound, out);
    if (trace_cmd->parsed()) return cmd_trace(trace, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace smallkv::cli
