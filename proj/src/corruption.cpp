#include "attreval/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "attreval/errors.hpp"
#include "attreval/parallel.hpp"

namespace attreval::corruption {

namespace {

bool same_k(double a, double b) { return fraction_key(a) == fraction_key(b); }

}  // namespace

std::string to_string(Scheme s) { return s == Scheme::top ? "top" : "bot"; }

Scheme scheme_from_string(const std::string& name) {
  if (name == "top") return Scheme::top;
  if (name == "bot" || name == "bottom") return Scheme::bot;
  throw ConfigError("unknown corruption scheme '" + name + "'");
}

std::vector<double> default_k_grid(bool include_one) {
  std::vector<double> grid;
  for (int i = 0; i < 10; ++i) grid.push_back((5.0 + 10.0 * i) / 100.0);
  if (include_one) grid.push_back(1.0);
  return grid;
}

std::vector<double> parse_k_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ConfigError("bad k value '" + item + "' in k grid");
    grid.push_back(v);
  }
  return grid;
}

void CorruptionPlan::validate() const {
  if (k_grid.empty()) throw ConfigError("k grid is empty");
  for (std::size_t i = 0; i < k_grid.size(); ++i) {
    if (!(k_grid[i] > 0.0 && k_grid[i] <= 1.0)) throw ConfigError("k values must lie in (0, 1]");
    if (i > 0 && !(k_grid[i] > k_grid[i - 1])) throw ConfigError("k values must be strictly increasing");
  }
}

RankedPositions rank_positive(const Tensor& scores) {
  RankedPositions r;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] > 0.0) r.descending.push_back(i);
  r.ascending = r.descending;
  std::stable_sort(r.descending.begin(), r.descending.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::stable_sort(r.ascending.begin(), r.ascending.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return r;
}

std::size_t corrupted_count(std::size_t positive, double k) {
  // the small offset keeps exact halves like 0.15 * 10 from rounding down
  return static_cast<std::size_t>(std::floor(static_cast<double>(positive) * k + 0.5 + 1e-9));
}

Tensor corrupt(const Tensor& x, std::span<const std::size_t> ranked, double k, Rng& rng, bool* degenerate) {
  if (!(k > 0.0 && k <= 1.0)) throw ParameterError("corruption fraction must lie in (0, 1]");
  const std::size_t count = std::min(corrupted_count(ranked.size(), k), ranked.size());
  if (degenerate) *degenerate = count == 0;
  Tensor out = x;
  std::vector<std::size_t> chosen(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(chosen.begin(), chosen.end());
  for (std::size_t pos : chosen) {
    if (pos >= out.size()) throw ParameterError("ranked position outside the sample");
    out[pos] = standard_normal(rng);
  }
  return out;
}

std::optional<double> normalized_score_drop(double s_orig, double s_corr) {
  if (!(s_orig > kScoreEpsilon)) return std::nullopt;
  return (s_orig - s_corr) / s_orig;
}

CorruptionResult run_corruption(const scorer::Scorer& scorer, std::span<const data::TimeSeriesSample> samples,
                                std::span<const attribution::RelevanceMap> maps, const std::string& method,
                                const CorruptionPlan& plan, const CorruptionOptions& options) {
  plan.validate();
  if (maps.size() != samples.size()) {
    throw ConfigError("corruption needs one relevance map per sample (" + std::to_string(maps.size()) + " maps for " +
                      std::to_string(samples.size()) + " samples)");
  }
  CorruptionResult result;
  if (samples.empty()) return result;
  const std::vector<std::size_t> shape = samples.front().values.shape();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].values.shape() != shape) throw ConfigError("corruption needs equally shaped samples");
    if (maps[i].sample_id != samples[i].id || maps[i].scores.shape() != shape) {
      throw ConfigError("relevance map " + std::to_string(i) + " does not belong to sample " +
                        std::to_string(samples[i].id));
    }
  }
  const std::size_t m = shape[0];
  const std::size_t t = shape[1];
  const std::size_t per = m * t;

  enum class Status { kept, low_confidence, misclassified };
  struct Outcome {
    Status status = Status::kept;
    std::vector<ScoreDropRecord> records;
  };
  std::vector<Outcome> outcomes(samples.size());

  parallel_for(samples.size(), options.jobs, [&](std::size_t i) {
    const auto& sample = samples[i];
    Outcome& out = outcomes[i];
    Tensor clean({1, m, t});
    std::copy_n(sample.values.data(), per, clean.data());
    Tensor probs;
    try {
      probs = scorer.score_batch(clean);
    } catch (const Error& e) {
      throw ScorerError("scoring sample " + std::to_string(sample.id) + " failed: " + e.what());
    }
    const std::size_t classes = probs.dim(1);
    const auto predicted = static_cast<std::size_t>(std::max_element(probs.data(), probs.data() + classes) - probs.data());
    const double s_orig = probs[predicted];
    if (options.restrict_correct && predicted != sample.label) {
      out.status = Status::misclassified;
      return;
    }
    if (!normalized_score_drop(s_orig, s_orig)) {
      out.status = Status::low_confidence;
      return;
    }

    const RankedPositions ranked = rank_positive(maps[i].scores);
    std::vector<Tensor> corrupted;
    std::vector<std::size_t> pending;
    for (Scheme scheme : options.schemes) {
      const auto& order = scheme == Scheme::top ? ranked.descending : ranked.ascending;
      for (double k : plan.k_grid) {
        Rng rng(derive_seed(plan.seed, {sample.id, fraction_key(k)}));
        bool degenerate = false;
        Tensor xbar = corrupt(sample.values, order, k, rng, &degenerate);
        ScoreDropRecord r;
        r.sample_id = sample.id;
        r.method = method;
        r.scheme = scheme;
        r.k = k;
        r.corrupted = corrupted_count(order.size(), k);
        r.s_orig = s_orig;
        r.s_corr = s_orig;
        if (!degenerate) {
          pending.push_back(out.records.size());
          corrupted.push_back(std::move(xbar));
        }
        out.records.push_back(r);
      }
    }
    if (!corrupted.empty()) {
      Tensor batch;
      try {
        batch = scorer.score_batch(stack(corrupted));
      } catch (const Error& e) {
        throw ScorerError("scoring sample " + std::to_string(sample.id) + " failed: " + e.what());
      }
      for (std::size_t j = 0; j < pending.size(); ++j) out.records[pending[j]].s_corr = batch[j * classes + predicted];
    }
    for (auto& r : out.records) r.drop = *normalized_score_drop(r.s_orig, r.s_corr);
  });

  for (auto& o : outcomes) {
    switch (o.status) {
      case Status::low_confidence: ++result.diagnostics.low_confidence; break;
      case Status::misclassified: ++result.diagnostics.misclassified; break;
      case Status::kept:
        for (auto& r : o.records) {
          result.diagnostics.degenerate += r.corrupted == 0;
          result.records.push_back(std::move(r));
        }
        break;
    }
  }
  result.top_curve = curve_from_records(result.records, Scheme::top, plan.k_grid, per);
  result.bot_curve = curve_from_records(result.records, Scheme::bot, plan.k_grid, per);
  return result;
}

std::vector<CurvePoint> curve_from_records(std::span<const ScoreDropRecord> records, Scheme scheme,
                                           std::span<const double> k_grid, std::size_t positions) {
  std::vector<CurvePoint> curve;
  curve.push_back(CurvePoint{});
  for (double k : k_grid) {
    CurvePoint p;
    p.k = k;
    for (const auto& r : records) {
      if (r.scheme != scheme || !same_k(r.k, k)) continue;
      p.n_ratio += static_cast<double>(r.corrupted) / static_cast<double>(positions);
      p.mean_drop += r.drop;
      ++p.count;
    }
    if (p.count > 0) {
      p.n_ratio /= static_cast<double>(p.count);
      p.mean_drop /= static_cast<double>(p.count);
    }
    curve.push_back(p);
  }
  return curve;
}

std::vector<double> drops_at(std::span<const ScoreDropRecord> records, Scheme scheme, double k) {
  std::vector<double> out;
  for (const auto& r : records)
    if (r.scheme == scheme && same_k(r.k, k)) out.push_back(r.drop);
  return out;
}

void save_records_csv(const std::string& path, std::span<const ScoreDropRecord> records) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write " + path);
  out << "sample_id,method,scheme,k,P_k,s_orig,s_corr,drop\n";
  for (const auto& r : records)
    out << fmt::format("{},{},{},{},{},{},{},{}\n", r.sample_id, r.method, to_string(r.scheme), r.k, r.corrupted,
                       r.s_orig, r.s_corr, r.drop);
  if (!out) throw ArtifactError("failed writing " + path);
}

std::vector<ScoreDropRecord> load_records_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("missing score-drop records " + path);
  std::string line;
  std::getline(in, line);
  if (line != "sample_id,method,scheme,k,P_k,s_orig,s_corr,drop") throw ParseError(path + ":1: unexpected header");
  std::vector<ScoreDropRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw ParseError(path + ":" + std::to_string(line_no) + ": expected 8 columns");
    try {
      ScoreDropRecord r;
      r.sample_id = std::stoull(cells[0]);
      r.method = cells[1];
      r.scheme = scheme_from_string(cells[2]);
      r.k = std::stod(cells[3]);
      r.corrupted = std::stoull(cells[4]);
      r.s_orig = std::stod(cells[5]);
      r.s_corr = std::stod(cells[6]);
      r.drop = std::stod(cells[7]);
      records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace attreval::corruption
