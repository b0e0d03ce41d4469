#include "attreval/report.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "attreval/errors.hpp"

namespace attreval::report {

namespace {

constexpr double kLeft = 64.0;
constexpr double kRight = 24.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 52.0;

const char* kPalette[] = {"#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#7d5ba6", "#00798c", "#8c564b", "#555555"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string header(double width, double height) {
  return fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{0:.0f}\" height=\"{1:.0f}\" "
      "viewBox=\"0 0 {0:.0f} {1:.0f}\" font-family=\"Helvetica, Arial, sans-serif\" font-size=\"11\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      width, height);
}

std::string fmt_num(double v) {
  // trims "-0.00" so identical geometry always prints identically
  auto s = fmt::format("{:.2f}", v);
  return s == "-0.00" ? "0.00" : s;
}

}  // namespace

double ridge_x(const RidgePlotSpec& spec, double drop) {
  return kLeft + (drop - spec.x_min) / (spec.x_max - spec.x_min) * spec.width;
}

std::string render_ridgeline(std::span<const stats::DropDistribution> rows, const RidgePlotSpec& spec) {
  if (rows.empty()) throw ParameterError("ridgeline needs at least one k level");
  if (!(spec.x_max > spec.x_min)) throw ParameterError("ridgeline window is empty");
  std::vector<const stats::DropDistribution*> order;
  for (const auto& r : rows) {
    if (r.density.grid.empty() || r.density.grid.size() != r.density.values.size()) {
      throw ParameterError(fmt::format("empty density at k={}", r.k));
    }
    order.push_back(&r);
  }
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->k < b->k; });

  double peak = 0.0;
  for (auto* r : order)
    for (double v : r->density.values) peak = std::max(peak, v);
  if (!(peak > 0.0)) peak = 1.0;

  const std::size_t n = order.size();
  const double reach = spec.row_height * (1.0 + spec.overlap);
  const double top = kTop + reach - spec.row_height;
  const double height = top + spec.row_height * static_cast<double>(n) + kBottom;
  const double full_width = kLeft + spec.width + kRight;

  std::string svg = header(full_width, height);
  if (!spec.title.empty()) {
    svg += fmt::format("<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
                       fmt_num(kLeft + spec.width / 2), escape(spec.title));
  }
  // top row drawn first so lower rows overlap it
  for (std::size_t idx = n; idx-- > 0;) {
    const auto& d = *order[idx];
    const double base = top + spec.row_height * static_cast<double>(n - idx);
    std::string path;
    bool open = false;
    double last_x = 0.0;
    for (std::size_t i = 0; i < d.density.grid.size(); ++i) {
      const double s = d.density.grid[i];
      if (s < spec.x_min || s > spec.x_max) continue;
      const double x = ridge_x(spec, s);
      const double y = base - d.density.values[i] / peak * reach;
      if (!open) {
        path += fmt::format("M{},{} ", fmt_num(x), fmt_num(base));
        open = true;
      }
      path += fmt::format("L{},{} ", fmt_num(x), fmt_num(y));
      last_x = x;
    }
    if (open) path += fmt::format("L{},{} Z", fmt_num(last_x), fmt_num(base));
    svg += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#cccccc\"/>\n", fmt_num(kLeft),
                       fmt_num(base), fmt_num(kLeft + spec.width), fmt_num(base));
    svg += fmt::format("<path class=\"density\" data-k=\"{}\" d=\"{}\" fill=\"{}\" fill-opacity=\"0.8\" stroke=\"{}\" stroke-width=\"0.8\"/>\n",
                       d.k, path, spec.fill, spec.stroke);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.2f}</text>\n", fmt_num(kLeft - 6),
                       fmt_num(base - 2), d.k);
  }
  const double axis_y = top + spec.row_height * static_cast<double>(n);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", fmt_num(kLeft),
                     fmt_num(axis_y), fmt_num(kLeft + spec.width));
  for (double tick = std::ceil(spec.x_min * 4) / 4; tick <= spec.x_max + 1e-12; tick += 0.25) {
    const double x = ridge_x(spec, tick);
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>"
                       "<text x=\"{0}\" y=\"{3}\" text-anchor=\"middle\">{4:.2f}</text>\n",
                       fmt_num(x), fmt_num(axis_y), fmt_num(axis_y + 4), fmt_num(axis_y + 16), tick);
  }
  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">normalized score drop</text>\n",
                     fmt_num(kLeft + spec.width / 2), fmt_num(axis_y + 36));
  svg += fmt::format("<text x=\"14\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {0})\">k</text>\n",
                     fmt_num(top + spec.row_height * static_cast<double>(n) / 2));
  svg += "</svg>\n";
  return svg;
}

std::vector<Series> grid_series(std::span<const double> grid, const std::vector<std::string>& labels,
                                const std::vector<std::vector<double>>& ys) {
  if (labels.size() != ys.size()) throw ParameterError("one label per curve expected");
  std::vector<Series> out;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (ys[i].size() != grid.size()) {
      throw ParameterError(fmt::format("curve {} has {} values for a grid of {}", labels[i], ys[i].size(), grid.size()));
    }
    out.push_back({labels[i], {grid.begin(), grid.end()}, ys[i]});
  }
  return out;
}

std::string render_curves(std::span<const Series> series, const CurvePlotSpec& spec) {
  if (series.empty()) throw ParameterError("no curves to draw");
  double x_lo = HUGE_VAL, x_hi = -HUGE_VAL, y_lo = HUGE_VAL, y_hi = -HUGE_VAL;
  for (const auto& s : series) {
    if (s.x.empty() || s.x.size() != s.y.size()) {
      throw ParameterError(fmt::format("curve {} has mismatched or empty x/y", s.label));
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) throw NumericError("non-finite value in curve " + s.label);
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  }
  if (spec.fixed_y) {
    y_lo = spec.y_min;
    y_hi = spec.y_max;
  }
  if (!(x_hi > x_lo)) x_hi = x_lo + 1.0;
  if (!(y_hi > y_lo)) {
    y_lo -= 0.5;
    y_hi += 0.5;
  }
  const double legend_h = 16.0 * static_cast<double>(series.size());
  const double W = kLeft + spec.width + kRight + 120.0;
  const double H = kTop + spec.height + kBottom;
  auto px = [&](double x) { return kLeft + (x - x_lo) / (x_hi - x_lo) * spec.width; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y_lo) / (y_hi - y_lo)) * spec.height; };

  std::string svg = header(W, std::max(H, kTop + legend_h + 10));
  if (!spec.title.empty()) {
    svg += fmt::format("<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
                       fmt_num(kLeft + spec.width / 2), escape(spec.title));
  }
  svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
                     fmt_num(kLeft), fmt_num(kTop), fmt_num(spec.width), fmt_num(spec.height));
  for (int i = 0; i <= 4; ++i) {
    const double xv = x_lo + (x_hi - x_lo) * i / 4.0;
    const double yv = y_lo + (y_hi - y_lo) * i / 4.0;
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.2f}</text>\n", fmt_num(px(xv)),
                       fmt_num(kTop + spec.height + 16), xv);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.2f}</text>\n", fmt_num(kLeft - 6),
                       fmt_num(py(yv) + 4), yv);
  }
  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", fmt_num(kLeft + spec.width / 2),
                     fmt_num(kTop + spec.height + 36), escape(spec.x_label));
  svg += fmt::format("<text x=\"14\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {0})\">{1}</text>\n",
                     fmt_num(kTop + spec.height / 2), escape(spec.y_label));
  for (std::size_t c = 0; c < series.size(); ++c) {
    const auto& s = series[c];
    const char* color = kPalette[c % std::size(kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i) pts += ' ';
      pts += fmt_num(px(s.x[i])) + "," + fmt_num(py(std::clamp(s.y[i], y_lo, y_hi)));
    }
    svg += fmt::format("<polyline class=\"curve\" data-label=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
                       escape(s.label), pts, color);
    const double ly = kTop + 12.0 + 16.0 * static_cast<double>(c);
    const double lx = kLeft + spec.width + 12.0;
    svg += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"/>"
                       "<text x=\"{}\" y=\"{}\">{}</text>\n",
                       fmt_num(lx), fmt_num(ly), fmt_num(lx + 16), fmt_num(ly), color, fmt_num(lx + 20),
                       fmt_num(ly + 4), escape(s.label));
  }
  svg += "</svg>\n";
  return svg;
}

std::string per_sample_report(std::span<const data::TimeSeriesSample> samples,
                              std::span<const attribution::RelevanceMap> maps,
                              std::span<const corruption::ScoreDropRecord> records, double k,
                              std::vector<SamplePanel>* panels) {
  if (samples.empty()) throw ParameterError("per-sample report needs at least one sample");
  std::map<std::uint64_t, const attribution::RelevanceMap*> by_id;
  for (const auto& m : maps) by_id[m.sample_id] = &m;

  constexpr double panel_w = 360.0, panel_h = 150.0, gap = 46.0;
  const double W = kLeft + panel_w + kRight;
  const double H = kTop + static_cast<double>(samples.size()) * (panel_h + gap);
  std::string svg = header(W, H);
  if (panels) panels->clear();

  for (std::size_t p = 0; p < samples.size(); ++p) {
    const auto& sample = samples[p];
    auto it = by_id.find(sample.id);
    if (it == by_id.end()) throw ParameterError(fmt::format("no relevance map for sample {}", sample.id));
    const auto& scores = it->second->scores;
    if (scores.size() != sample.values.size()) {
      throw ParameterError(fmt::format("relevance map of sample {} does not match its shape", sample.id));
    }
    const corruption::ScoreDropRecord* rec = nullptr;
    for (const auto& r : records) {
      if (r.sample_id == sample.id && r.scheme == corruption::Scheme::top && std::abs(r.k - k) < 1e-9) {
        rec = &r;
        break;
      }
    }
    if (!rec) throw ParameterError(fmt::format("no top-scheme record for sample {} at k={}", sample.id, k));

    const auto ranked = corruption::rank_positive(scores);
    const std::size_t marked = corruption::corrupted_count(ranked.descending.size(), k);
    if (panels) panels->push_back({sample.id, marked, rec->drop});

    const std::size_t M = sample.channels(), T = sample.length();
    double lo = HUGE_VAL, hi = -HUGE_VAL;
    for (std::size_t i = 0; i < sample.values.size(); ++i) {
      lo = std::min(lo, sample.values[i]);
      hi = std::max(hi, sample.values[i]);
    }
    if (!(hi > lo)) {
      lo -= 1.0;
      hi += 1.0;
    }
    const double y0 = kTop + static_cast<double>(p) * (panel_h + gap);
    auto px = [&](std::size_t t) { return kLeft + (T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 0.5) * panel_w; };
    auto py = [&](double v) { return y0 + (1.0 - (v - lo) / (hi - lo)) * panel_h; };

    svg += fmt::format("<g class=\"panel\" data-sample=\"{}\">\n", sample.id);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">sample {} (label {}): drop {:.3f} at k={:.2f}</text>\n",
                       fmt_num(kLeft + panel_w / 2), fmt_num(y0 - 8), sample.id, sample.label, rec->drop, k);
    svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999999\"/>\n",
                       fmt_num(kLeft), fmt_num(y0), fmt_num(panel_w), fmt_num(panel_h));
    for (std::size_t m = 0; m < M; ++m) {
      std::string pts;
      for (std::size_t t = 0; t < T; ++t) {
        if (t) pts += ' ';
        pts += fmt_num(px(t)) + "," + fmt_num(py(sample.values[m * T + t]));
      }
      svg += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1\"/>\n", pts,
                         kPalette[m % std::size(kPalette)]);
    }
    std::vector<std::size_t> top(ranked.descending.begin(), ranked.descending.begin() + static_cast<std::ptrdiff_t>(marked));
    std::sort(top.begin(), top.end());
    for (std::size_t flat : top) {
      svg += fmt::format("<circle class=\"marked\" cx=\"{}\" cy=\"{}\" r=\"2\" fill=\"#d62728\"/>\n",
                         fmt_num(px(flat % T)), fmt_num(py(sample.values[flat])));
    }
    svg += "</g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace attreval::report
