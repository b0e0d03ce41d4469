#pragma once

#include <span>
#include <string>
#include <vector>

#include "attreval/attribution.hpp"
#include "attreval/corruption.hpp"
#include "attreval/dataset.hpp"
#include "attreval/stats.hpp"

namespace attreval::report {

struct RidgePlotSpec {
  std::string title;
  double x_min = -0.25;  // display window for the score drop
  double x_max = 1.25;
  double overlap = 0.6;  // how far a peak may reach into the row above, in rows
  double width = 420.0;
  double row_height = 34.0;
  std::string fill = "#6a8fc7";
  std::string stroke = "#22324f";
};

// Maps a score drop to its horizontal pixel position.
double ridge_x(const RidgePlotSpec& spec, double drop);

// One filled path per k, smallest k at the bottom. Densities are clipped to
// the display window, never modified.
std::string render_ridgeline(std::span<const stats::DropDistribution> rows, const RidgePlotSpec& spec);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct CurvePlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  double width = 480.0;
  double height = 320.0;
  bool fixed_y = false;  // use [y_min, y_max] instead of the data range
  double y_min = 0.0;
  double y_max = 1.0;
};

std::string render_curves(std::span<const Series> series, const CurvePlotSpec& spec);

// Series over a shared grid; every y must match the grid length.
std::vector<Series> grid_series(std::span<const double> grid, const std::vector<std::string>& labels,
                                const std::vector<std::vector<double>>& ys);

struct SamplePanel {
  std::uint64_t sample_id = 0;
  std::size_t marked = 0;  // corrupted positions drawn as dots
  double drop = 0.0;
};

// One panel per sample: the series, dots on the top-k relevant positions and
// the sample's normalized score drop at k in the title.
std::string per_sample_report(std::span<const data::TimeSeriesSample> samples,
                              std::span<const attribution::RelevanceMap> maps,
                              std::span<const corruption::ScoreDropRecord> records, double k,
                              std::vector<SamplePanel>* panels = nullptr);

}  // namespace attreval::report
