#include "attreval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "attreval/errors.hpp"

namespace attreval::metrics {

double auc_trapezoid(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ParameterError("auc needs matching x and y lengths");
  if (xs.size() < 2) throw ParameterError("auc needs at least two points");
  double area = 0.0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (!(xs[i] > xs[i - 1])) throw ParameterError("auc x values must be strictly increasing");
    area += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
  }
  return area;
}

double normalized_curve_auc(std::span<const corruption::CurvePoint> curve, bool* degenerate) {
  std::vector<double> xs{0.0};
  std::vector<double> ys{0.0};
  std::vector<std::size_t> merged{1};
  for (const auto& p : curve) {
    if (p.count == 0 && p.k > 0.0) continue;
    if (p.n_ratio <= 0.0) continue;
    if (p.n_ratio < xs.back()) throw ParameterError("corruption ratio decreases along the curve");
    if (p.n_ratio == xs.back()) {
      ys.back() = (ys.back() * static_cast<double>(merged.back()) + p.mean_drop) / static_cast<double>(merged.back() + 1);
      ++merged.back();
      continue;
    }
    xs.push_back(p.n_ratio);
    ys.push_back(p.mean_drop);
    merged.push_back(1);
  }
  if (degenerate) *degenerate = xs.size() < 2;
  if (xs.size() < 2) return 0.0;
  return auc_trapezoid(xs, ys) / xs.back();
}

double f1_score(double auc_top, double auc_bot, bool* degenerate) {
  const double denom = auc_top + (1.0 - auc_bot);
  if (degenerate) *degenerate = denom == 0.0;
  if (denom == 0.0) return 0.0;
  return auc_top * (1.0 - auc_bot) / denom;
}

CoarseMetrics coarse_metrics(std::span<const corruption::CurvePoint> top_curve,
                             std::span<const corruption::CurvePoint> bot_curve) {
  CoarseMetrics m;
  bool top_flat = false, bot_flat = false, f1_flat = false;
  m.auc_top = normalized_curve_auc(top_curve, &top_flat);
  m.auc_bot = normalized_curve_auc(bot_curve, &bot_flat);
  m.f1 = f1_score(m.auc_top, m.auc_bot, &f1_flat);
  m.degenerate = top_flat || bot_flat || f1_flat;
  return m;
}

namespace {

// Joint min-max over every value; all 0.5 when the values coincide.
std::vector<std::vector<double>> rescale_jointly(const std::vector<const std::vector<double>*>& curves, bool& degenerate) {
  double lo = HUGE_VAL, hi = -HUGE_VAL;
  for (const auto* c : curves)
    for (double v : *c) {
      if (!std::isfinite(v)) throw NumericError("non-finite skew or kurtosis value");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  degenerate = !(hi > lo);
  std::vector<std::vector<double>> out;
  for (const auto* c : curves) {
    std::vector<double> r(c->size());
    for (std::size_t i = 0; i < c->size(); ++i) r[i] = degenerate ? 0.5 : ((*c)[i] - lo) / (hi - lo);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

FineResult fine_metrics(std::span<const double> k_grid, std::span<const MethodCurves> methods) {
  if (k_grid.size() < 2) throw ParameterError("fine metrics need at least two k values");
  if (methods.empty()) throw ParameterError("fine metrics need at least one method");
  std::vector<const std::vector<double>*> skews, kurts;
  for (const auto& m : methods) {
    if (m.skew.size() != k_grid.size() || m.kurt.size() != k_grid.size()) {
      throw ParameterError("method " + m.method + " lacks skew/kurtosis at some grid k");
    }
    skews.push_back(&m.skew);
    kurts.push_back(&m.kurt);
  }
  FineResult result;
  result.rescaled_skew = rescale_jointly(skews, result.skew_degenerate);
  result.rescaled_kurt = rescale_jointly(kurts, result.kurt_degenerate);
  const double span = k_grid.back() - k_grid.front();
  for (std::size_t i = 0; i < methods.size(); ++i) {
    FineMetrics f;
    f.auc_skew_bar = span - auc_trapezoid(k_grid, result.rescaled_skew[i]);
    f.auc_kurt = auc_trapezoid(k_grid, result.rescaled_kurt[i]);
    result.metrics.push_back(f);
  }
  return result;
}

MetricTable build_table(const std::vector<std::string>& methods, const std::vector<std::vector<MetricValues>>& values) {
  if (methods.size() != values.size()) throw ParameterError("one value list per method expected");
  if (methods.size() < 2) throw ParameterError("standardisation needs at least two methods");
  MetricTable table;
  table.repetitions = values.front().size();
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const auto& reps = values[i];
    if (reps.empty() || reps.size() != table.repetitions) {
      throw ParameterError("every method needs the same, non-zero number of repetitions");
    }
    MethodRow row;
    row.method = methods[i];
    row.repetitions = reps;
    const auto n = static_cast<double>(reps.size());
    for (std::size_t m = 0; m < kMetricCount; ++m) {
      double sum = 0.0;
      for (const auto& r : reps) sum += r[m];
      row.mean[m] = sum / n;
      double sq = 0.0;
      for (const auto& r : reps) sq += (r[m] - row.mean[m]) * (r[m] - row.mean[m]);
      row.std[m] = reps.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
    }
    table.rows.push_back(std::move(row));
  }
  standardize(table);
  return table;
}

void standardize(MetricTable& table) {
  if (table.rows.size() < 2) throw ParameterError("standardisation needs at least two methods");
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    double lo = HUGE_VAL, hi = -HUGE_VAL;
    for (const auto& r : table.rows) {
      lo = std::min(lo, r.mean[m]);
      hi = std::max(hi, r.mean[m]);
    }
    table.star_degenerate[m] = !(hi > lo);
    for (auto& r : table.rows) {
      if (table.star_degenerate[m]) {
        r.star_mean[m] = 0.5;
        r.star_std[m] = 0.0;
      } else {
        r.star_mean[m] = (r.mean[m] - lo) / (hi - lo);
        r.star_std[m] = r.std[m] / (hi - lo);
      }
    }
  }
}

namespace {

std::vector<std::string> csv_header() {
  std::vector<std::string> h{"method"};
  for (const char* name : kMetricNames) {
    h.push_back(name);
    h.push_back(std::string(name) + "_std");
  }
  for (const char* name : kMetricNames) {
    h.push_back(std::string(name) + "_star");
    h.push_back(std::string(name) + "_star_std");
  }
  return h;
}

}  // namespace

std::string table_csv(const MetricTable& table) {
  std::string out;
  const auto header = csv_header();
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
  out += '\n';
  for (const auto& r : table.rows) {
    out += r.method;
    for (std::size_t m = 0; m < kMetricCount; ++m) out += fmt::format(",{},{}", r.mean[m], r.std[m]);
    for (std::size_t m = 0; m < kMetricCount; ++m) out += fmt::format(",{},{}", r.star_mean[m], r.star_std[m]);
    out += '\n';
  }
  return out;
}

MetricTable parse_table_csv(const std::string& text) {
  std::stringstream in(text);
  std::string line;
  std::getline(in, line);
  std::string expected;
  const auto header = csv_header();
  for (std::size_t i = 0; i < header.size(); ++i) expected += (i ? "," : "") + header[i];
  if (line != expected) throw ParseError("metric table: unexpected header");
  MetricTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size()) throw ParseError("metric table line " + std::to_string(line_no) + ": wrong column count");
    MethodRow r;
    r.method = cells[0];
    try {
      for (std::size_t m = 0; m < kMetricCount; ++m) {
        r.mean[m] = std::stod(cells[1 + 2 * m]);
        r.std[m] = std::stod(cells[2 + 2 * m]);
        r.star_mean[m] = std::stod(cells[1 + 2 * kMetricCount + 2 * m]);
        r.star_std[m] = std::stod(cells[2 + 2 * kMetricCount + 2 * m]);
      }
    } catch (const std::exception&) {
      throw ParseError("metric table line " + std::to_string(line_no) + ": non-numeric cell");
    }
    table.rows.push_back(std::move(r));
  }
  return table;
}

std::string table_json(const MetricTable& table, const std::string& extra_json) {
  nlohmann::json root;
  root["schema_version"] = 1;
  root["config_hash"] = table.config_hash;
  root["repetitions"] = table.repetitions;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows) {
    nlohmann::json row;
    row["method"] = r.method;
    for (std::size_t m = 0; m < kMetricCount; ++m) {
      row["raw"][kMetricNames[m]] = {{"mean", r.mean[m]}, {"std", r.std[m]}};
      row["star"][kMetricNames[m]] = {{"mean", r.star_mean[m]}, {"std", r.star_std[m]}};
    }
    nlohmann::json reps = nlohmann::json::array();
    for (const auto& v : r.repetitions) {
      nlohmann::json rep;
      for (std::size_t m = 0; m < kMetricCount; ++m) rep[kMetricNames[m]] = v[m];
      reps.push_back(rep);
    }
    row["repetitions"] = std::move(reps);
    rows.push_back(std::move(row));
  }
  root["methods"] = std::move(rows);
  const auto extra = nlohmann::json::parse(extra_json);
  for (auto it = extra.begin(); it != extra.end(); ++it) root[it.key()] = it.value();
  return root.dump(2) + "\n";
}

std::string table_markdown(const MetricTable& table, int precision) {
  std::string out = "| method |";
  for (const char* name : kMetricNames) out += fmt::format(" {} |", name);
  for (const char* name : kMetricNames) out += fmt::format(" {}* |", name);
  out += "\n|---|";
  for (std::size_t i = 0; i < 2 * kMetricCount; ++i) out += "---|";
  out += '\n';
  for (const auto& r : table.rows) {
    out += "| " + r.method + " |";
    for (std::size_t m = 0; m < kMetricCount; ++m)
      out += fmt::format(" {:.{}f} ± {:.{}f} |", r.mean[m], precision, r.std[m], precision);
    for (std::size_t m = 0; m < kMetricCount; ++m)
      out += fmt::format(" {:.{}f} ± {:.{}f} |", r.star_mean[m], precision, r.star_std[m], precision);
    out += '\n';
  }
  return out;
}

}  // namespace attreval::metrics
