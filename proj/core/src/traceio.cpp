// SPDX-License-Identifier: Apache-2.0
#include "smallkv/traceio.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "smallkv/errors.hpp"

namespace smallkv {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string head_file(const char* prefix, HeadId id) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_l%03zu_h%03zu.f32", prefix, id.layer, id.head);
  return buf;
}

std::uint32_t to_little(std::uint32_t x) {
  if constexpr (std::endian::native == std::endian::big) {
    return (x >> 24) | ((x >> 8) & 0xff00u) | ((x << 8) & 0xff0000u) | (x << 24);
  }
  return x;
}

void write_floats(const fs::path& path, std::span<const double> values) {
  std::vector<std::uint32_t> raw(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    raw[i] = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(std::uint32_t)));
  if (!out) throw Error("write failed for " + path.string());
}

std::vector<double> read_floats(const fs::path& path, std::size_t count, HeadId id) {
  const std::string what = path.filename().string() + " (head " + to_string(id) + ")";
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw ParseError("missing payload " + what);
  if (size != count * sizeof(std::uint32_t)) {
    throw ParseError("payload " + what + " has " + std::to_string(size) + " bytes, expected " +
                     std::to_string(count * sizeof(std::uint32_t)));
  }
  std::vector<std::uint32_t> raw(count);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(size));
  if (!in) throw ParseError("cannot read payload " + what);
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = std::bit_cast<float>(to_little(raw[i]));
  }
  return out;
}

}  // namespace

std::string attention_file_name(HeadId id) { return head_file("attn", id); }
std::string score_file_name(HeadId id) { return head_file("score", id); }

AttentionMatrix TraceBundle::head_attention(std::size_t flat) const {
  return AttentionMatrix(attention.at(flat), head_id(flat), kTraceTolerance);
}

bool ValidationReport::ok() const noexcept {
  if (!problems.empty()) return false;
  for (const auto& h : heads) {
    if (!h.bad_rows.empty() || h.causality_violations || h.nan_count || h.range_violations) {
      return false;
    }
  }
  return true;
}

std::size_t ValidationReport::total_causality_violations() const noexcept {
  std::size_t n = 0;
  for (const auto& h : heads) n += h.causality_violations;
  return n;
}

std::size_t ValidationReport::total_nan() const noexcept {
  std::size_t n = 0;
  for (const auto& h : heads) n += h.nan_count;
  return n;
}

double ValidationReport::max_row_deviation() const noexcept {
  double m = 0.0;
  for (const auto& h : heads) m = std::max(m, h.max_row_deviation);
  return m;
}

std::string ValidationReport::to_csv() const {
  std::ostringstream os;
  os << "layer,head,max_row_deviation,causality_violations,nan_count,range_violations,bad_rows\n";
  for (const auto& h : heads) {
    os << h.head.layer << ',' << h.head.head << ',' << h.max_row_deviation << ','
       << h.causality_violations << ',' << h.nan_count << ',' << h.range_violations << ',';
    for (std::size_t i = 0; i < h.bad_rows.size(); ++i) {
      os << (i ? ";" : "") << h.bad_rows[i];
    }
    os << '\n';
  }
  return os.str();
}

ValidationReport validate(const TraceBundle& bundle, double tolerance) {
  ValidationReport report;
  const auto& m = bundle.manifest;
  const std::size_t n = m.tokens;
  if (bundle.attention.size() != m.head_count()) {
    report.problems.push_back("manifest lists " + std::to_string(m.head_count()) +
                              " heads, bundle holds " + std::to_string(bundle.attention.size()));
  }
  if (m.has_scores && bundle.scores.size() != bundle.attention.size()) {
    report.problems.push_back("score payload count " + std::to_string(bundle.scores.size()) +
                              " differs from head count " +
                              std::to_string(bundle.attention.size()));
  }
  for (std::size_t flat = 0; flat < bundle.attention.size(); ++flat) {
    const HeadId id = m.heads_per_layer ? bundle.head_id(flat) : HeadId{0, flat};
    const Matrix& a = bundle.attention[flat];
    HeadValidation hv;
    hv.head = id;
    if (a.rows() != n || a.cols() != n) {
      report.problems.push_back(to_string(id) + " payload is " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + ", manifest says " +
                                std::to_string(n) + "x" + std::to_string(n));
      report.heads.push_back(std::move(hv));
      continue;
    }
    for (std::size_t u = 0; u < n; ++u) {
      bool bad = false;
      double sum = 0.0;
      for (std::size_t v = 0; v < n; ++v) {
        const double w = a(u, v);
        if (std::isnan(w)) {
          ++hv.nan_count;
          bad = true;
          continue;
        }
        if (v > u && w != 0.0) {
          ++hv.causality_violations;
          bad = true;
        }
        if (w < 0.0 || w > 1.0 + tolerance) {
          ++hv.range_violations;
          bad = true;
        }
        sum += w;
      }
      const double dev = std::abs(sum - 1.0);
      if (std::isfinite(dev)) hv.max_row_deviation = std::max(hv.max_row_deviation, dev);
      if (!(dev <= tolerance)) bad = true;
      if (bad) hv.bad_rows.push_back(u);
    }
    if (flat < bundle.scores.size() && bundle.scores[flat].size() != n) {
      report.problems.push_back(to_string(id) + " score payload has " +
                                std::to_string(bundle.scores[flat].size()) + " entries");
    }
    report.heads.push_back(std::move(hv));
  }
  return report;
}

void write_trace(const TraceBundle& bundle, const fs::path& dir) {
  const auto report = validate(bundle);
  if (!report.ok()) {
    std::string why = report.problems.empty() ? "attention rows violate invariants"
                                              : report.problems.front();
    throw ValidationError("refusing to write trace: " + why);
  }
  const auto& m = bundle.manifest;
  fs::create_directories(dir);
  json doc = {{"model", m.model},           {"layers", m.layers},
              {"heads_per_layer", m.heads_per_layer},
              {"tokens", m.tokens},         {"precision", m.precision},
              {"creator", m.creator},       {"seed", m.seed},
              {"has_scores", m.has_scores}};
  {
    std::ofstream out(dir / kManifestName, std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / kManifestName).string());
    out << doc.dump(2) << '\n';
  }
  for (std::size_t flat = 0; flat < bundle.attention.size(); ++flat) {
    const HeadId id = bundle.head_id(flat);
    write_floats(dir / attention_file_name(id), bundle.attention[flat].data());
    if (m.has_scores) write_floats(dir / score_file_name(id), bundle.scores[flat]);
  }
}

TraceBundle load_trace(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifestName;
  std::ifstream in(manifest_path);
  if (!in) throw ParseError("missing " + manifest_path.string());
  TraceBundle b;
  try {
    const json doc = json::parse(in);
    auto& m = b.manifest;
    m.model = doc.at("model").get<std::string>();
    m.layers = doc.at("layers").get<std::size_t>();
    m.heads_per_layer = doc.at("heads_per_layer").get<std::size_t>();
    m.tokens = doc.at("tokens").get<std::size_t>();
    m.precision = doc.value("precision", std::string("float32"));
    m.creator = doc.value("creator", std::string());
    m.seed = doc.value("seed", std::uint64_t{0});
    m.has_scores = doc.value("has_scores", false);
  } catch (const json::exception& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  const auto& m = b.manifest;
  if (m.precision != "float32") {
    throw ParseError(manifest_path.string() + ": unsupported precision '" + m.precision + "'");
  }
  if (m.layers == 0 || m.heads_per_layer == 0 || m.tokens == 0) {
    throw ValidationError(manifest_path.string() + ": layers, heads and tokens must be positive");
  }
  const std::size_t n = m.tokens;
  for (std::size_t flat = 0; flat < m.head_count(); ++flat) {
    const HeadId id = b.head_id(flat);
    auto values = read_floats(dir / attention_file_name(id), n * n, id);
    Matrix a(n, n);
    std::copy(values.begin(), values.end(), a.data().begin());
    b.attention.push_back(std::move(a));
    if (m.has_scores) b.scores.push_back(read_floats(dir / score_file_name(id), n, id));
  }
  return b;
}

TraceBundle read_trace(const fs::path& dir) {
  TraceBundle b = load_trace(dir);
  const auto report = validate(b);
  if (!report.ok()) {
    if (!report.problems.empty()) throw ValidationError(report.problems.front());
    for (const auto& h : report.heads) {
      if (!h.bad_rows.empty()) {
        throw ValidationError("trace " + dir.string() + ": head " + to_string(h.head) + " row " +
                              std::to_string(h.bad_rows.front()) + " violates attention invariants");
      }
    }
  }
  return b;
}

TraceBundle toy_trace(const ToyModel& model, std::span<const int> tokens, std::string name) {
  if (tokens.empty()) throw ConfigError("toy_trace needs at least one token");
  TraceBundle b;
  b.manifest.model = std::move(name);
  b.manifest.layers = model.spec().layers;
  b.manifest.heads_per_layer = model.spec().heads;
  b.manifest.tokens = tokens.size();
  b.manifest.seed = model.spec().seed;
  b.manifest.has_scores = true;
  for (const auto& a : forward_attention(model, tokens)) {
    const auto s = accumulate_scores(a);
    b.scores.emplace_back(s.begin(), s.end());
    b.attention.push_back(a.weights());
  }
  return b;
}

std::vector<HeadScores> bundle_head_scores(const TraceBundle& bundle, MatchWindow window) {
  std::vector<HeadScores> out;
  out.reserve(bundle.attention.size());
  for (std::size_t flat = 0; flat < bundle.attention.size(); ++flat) {
    out.push_back({bundle.head_id(flat), window_scores(bundle.head_attention(flat), window)});
  }
  return out;
}

}  // namespace smallkv
