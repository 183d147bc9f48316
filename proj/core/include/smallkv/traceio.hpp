// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "smallkv/attention.hpp"
#include "smallkv/matching.hpp"
#include "smallkv/matrix.hpp"
#include "smallkv/toy_model.hpp"

namespace smallkv {

/// On-disk layout of a bundle directory:
///
///   manifest.json         model, layers, heads_per_layer, tokens, precision,
///                         creator, seed, has_scores
///   attn_lLLL_hHHH.f32    tokens x tokens little-endian float32, row-major,
///                         upper triangle stored as explicit zeros
///   score_lLLL_hHHH.f32   optional, tokens float32 accumulated scores
inline constexpr double kTraceTolerance = 1e-4;
inline constexpr const char* kManifestName = "manifest.json";

struct TraceManifest {
  std::string model;
  std::size_t layers = 0;
  std::size_t heads_per_layer = 0;
  std::size_t tokens = 0;
  std::string precision = "float32";
  std::string creator = "smallkv";
  std::uint64_t seed = 0;
  bool has_scores = false;

  std::size_t head_count() const noexcept { return layers * heads_per_layer; }
  friend bool operator==(const TraceManifest&, const TraceManifest&) = default;
};

struct TraceBundle {
  TraceManifest manifest;
  std::vector<Matrix> attention;             // flat head order (layer-major)
  std::vector<std::vector<double>> scores;   // empty unless manifest.has_scores

  HeadId head_id(std::size_t flat) const noexcept {
    return {flat / manifest.heads_per_layer, flat % manifest.heads_per_layer};
  }
  /// Attention of one head, checked at the 32-bit storage tolerance.
  AttentionMatrix head_attention(std::size_t flat) const;
};

std::string attention_file_name(HeadId id);
std::string score_file_name(HeadId id);

struct HeadValidation {
  HeadId head;
  double max_row_deviation = 0.0;
  std::size_t causality_violations = 0;  // non-zero weights above the diagonal
  std::size_t nan_count = 0;
  std::size_t range_violations = 0;      // weights outside [0, 1]
  std::vector<std::size_t> bad_rows;
};

struct ValidationReport {
  std::vector<std::string> problems;  // shape mismatches between manifest and payloads
  std::vector<HeadValidation> heads;

  bool ok() const noexcept;
  std::size_t total_causality_violations() const noexcept;
  std::size_t total_nan() const noexcept;
  double max_row_deviation() const noexcept;
  std::string to_csv() const;
};

/// Never throws for malformed data; everything found lands in the report.
ValidationReport validate(const TraceBundle& bundle, double tolerance = kTraceTolerance);

/// Refuses bundles that fail validation (ValidationError).
void write_trace(const TraceBundle& bundle, const std::filesystem::path& dir);

/// Parses a bundle without checking attention invariants. Missing or
/// truncated payloads raise ParseError naming the file and head.
TraceBundle load_trace(const std::filesystem::path& dir);

/// load_trace followed by validation; findings raise ValidationError.
TraceBundle read_trace(const std::filesystem::path& dir);

/// Records every head of `model` on `tokens`, with accumulated scores.
TraceBundle toy_trace(const ToyModel& model, std::span<const int> tokens, std::string name);

/// Per-head windowed scores, ready for match_heads.
std::vector<HeadScores> bundle_head_scores(const TraceBundle& bundle, MatchWindow window);

}  // namespace smallkv
