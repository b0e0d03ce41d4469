#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attreval/attribution.hpp"
#include "attreval/dataset.hpp"
#include "attreval/scorer.hpp"
#include "attreval/tensor.hpp"

namespace attreval::corruption {

enum class Scheme { top, bot };

std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& name);

// 0.05, 0.15, ..., 0.95 and optionally 1.0.
std::vector<double> default_k_grid(bool include_one = false);
// Comma separated fractions, e.g. "0.05,0.5,1".
std::vector<double> parse_k_grid(const std::string& text);

struct CorruptionPlan {
  std::vector<double> k_grid = default_k_grid();
  std::uint64_t seed = 0;

  void validate() const;
};

struct RankedPositions {
  std::vector<std::size_t> descending;  // flat indices m * T + t
  std::vector<std::size_t> ascending;
};

// Positions with a strictly positive score. Ties keep flat-index order in
// both lists.
RankedPositions rank_positive(const Tensor& scores);

// P_k = round(positive * k), halves rounded up.
std::size_t corrupted_count(std::size_t positive, double k);

// Replaces the first corrupted_count(ranked.size(), k) positions of `ranked`
// with N(0, 1) draws, taken in ascending flat-index order so two lists that
// select the same set produce the same output. `degenerate` reports P_k == 0.
Tensor corrupt(const Tensor& x, std::span<const std::size_t> ranked, double k, Rng& rng, bool* degenerate = nullptr);

// Scores at or below this are treated as undefined for the normalised drop.
inline constexpr double kScoreEpsilon = 1e-6;

// (s_orig - s_corr) / s_orig, or nothing when s_orig <= kScoreEpsilon.
std::optional<double> normalized_score_drop(double s_orig, double s_corr);

struct ScoreDropRecord {
  std::uint64_t sample_id = 0;
  std::string method;
  Scheme scheme = Scheme::top;
  double k = 0.0;
  std::size_t corrupted = 0;  // P_k
  double s_orig = 0.0;
  double s_corr = 0.0;
  double drop = 0.0;
};

// Mean over samples at one k; the first point of every curve is the
// (k, N~, drop) = (0, 0, 0) anchor.
struct CurvePoint {
  double k = 0.0;
  double n_ratio = 0.0;    // mean P_k / (M * T)
  double mean_drop = 0.0;
  std::size_t count = 0;
};

struct CorruptionOptions {
  std::vector<Scheme> schemes{Scheme::top, Scheme::bot};
  bool restrict_correct = false;
  std::size_t jobs = 1;
};

struct CorruptionDiagnostics {
  std::size_t low_confidence = 0;  // excluded because s_orig <= kScoreEpsilon
  std::size_t misclassified = 0;   // excluded by restrict_correct
  std::size_t degenerate = 0;      // records with P_k == 0
};

struct CorruptionResult {
  std::vector<ScoreDropRecord> records;  // ordered by sample, scheme, k
  std::vector<CurvePoint> top_curve;
  std::vector<CurvePoint> bot_curve;
  CorruptionDiagnostics diagnostics;
};

// `maps[i]` is the relevance of `samples[i]`. Scores are the probability of
// the class the scorer predicts on the clean input. Noise for (sample, k) is
// seeded by derive_seed(plan.seed, {sample id, fraction_key(k)}).
CorruptionResult run_corruption(const scorer::Scorer& scorer, std::span<const data::TimeSeriesSample> samples,
                                std::span<const attribution::RelevanceMap> maps, const std::string& method,
                                const CorruptionPlan& plan, const CorruptionOptions& options = {});

// Aggregates records of one scheme into a curve; `positions` is M * T.
std::vector<CurvePoint> curve_from_records(std::span<const ScoreDropRecord> records, Scheme scheme,
                                           std::span<const double> k_grid, std::size_t positions);

// Drops of one scheme at one k, in record order.
std::vector<double> drops_at(std::span<const ScoreDropRecord> records, Scheme scheme, double k);

void save_records_csv(const std::string& path, std::span<const ScoreDropRecord> records);
std::vector<ScoreDropRecord> load_records_csv(const std::string& path);

}  // namespace attreval::corruption
