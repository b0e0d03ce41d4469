#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "attreval/corruption.hpp"

namespace attreval::metrics {

// Trapezoid rule; xs strictly increasing, at least two points.
double auc_trapezoid(std::span<const double> xs, std::span<const double> ys);

// Area under mean drop vs mean corruption ratio, from the (0, 0) anchor to
// the curve's last ratio and divided by that span. Points sharing a ratio are
// merged by averaging their drops. `degenerate` is set (and 0 returned) when
// nothing was ever corrupted.
double normalized_curve_auc(std::span<const corruption::CurvePoint> curve, bool* degenerate = nullptr);

// auc_top (1 - auc_bot) / (auc_top + 1 - auc_bot); 0 with the flag set when
// the denominator vanishes.
double f1_score(double auc_top, double auc_bot, bool* degenerate = nullptr);

struct CoarseMetrics {
  double auc_top = 0.0;
  double auc_bot = 0.0;
  double f1 = 0.0;
  bool degenerate = false;
};

CoarseMetrics coarse_metrics(std::span<const corruption::CurvePoint> top_curve,
                             std::span<const corruption::CurvePoint> bot_curve);

struct MethodCurves {
  std::string method;
  std::vector<double> skew;  // one value per grid k
  std::vector<double> kurt;
};

struct FineMetrics {
  double auc_skew_bar = 0.0;
  double auc_kurt = 0.0;
};

struct FineResult {
  std::vector<FineMetrics> metrics;  // per method, input order
  std::vector<std::vector<double>> rescaled_skew;
  std::vector<std::vector<double>> rescaled_kurt;
  bool skew_degenerate = false;
  bool kurt_degenerate = false;
};

// Skew and kurtosis are min-max rescaled jointly over every method and k,
// integrated over the grid, and skew is inverted against the grid span:
// auc_skew_bar = (k_last - k_first) - integral.
FineResult fine_metrics(std::span<const double> k_grid, std::span<const MethodCurves> methods);

inline constexpr std::size_t kMetricCount = 4;
inline constexpr std::array<const char*, kMetricCount> kMetricNames{"auc_s_top", "f1_s", "auc_skew_bar", "auc_kurt"};

using MetricValues = std::array<double, kMetricCount>;

struct MethodRow {
  std::string method;
  MetricValues mean{};
  MetricValues std{};
  MetricValues star_mean{};
  MetricValues star_std{};
  std::vector<MetricValues> repetitions;
};

struct MetricTable {
  std::vector<MethodRow> rows;
  std::size_t repetitions = 0;
  std::string config_hash;
  std::array<bool, kMetricCount> star_degenerate{};
};

// values[method][repetition]. Means and sample standard deviations per
// method, then starred columns min-max rescaled across method means (the
// standard deviations by the same factor).
MetricTable build_table(const std::vector<std::string>& methods, const std::vector<std::vector<MetricValues>>& values);

// Recomputes the starred columns from the raw means and deviations.
void standardize(MetricTable& table);

std::string table_csv(const MetricTable& table);
MetricTable parse_table_csv(const std::string& text);
std::string table_json(const MetricTable& table, const std::string& extra_json = "{}");
std::string table_markdown(const MetricTable& table, int precision = 3);

}  // namespace attreval::metrics
