#include "attreval/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "attreval/errors.hpp"

namespace attreval::stats {

CentralMoments central_moments(std::span<const double> samples) {
  if (samples.empty()) throw ParameterError("moments of an empty sample set");
  const auto n = static_cast<long double>(samples.size());
  long double sum = 0.0L;
  for (double x : samples) sum += x;
  const long double mean = sum / n;
  long double s2 = 0.0L, s3 = 0.0L, s4 = 0.0L;
  for (double x : samples) {
    const long double d = x - mean;
    const long double d2 = d * d;
    s2 += d2;
    s3 += d2 * d;
    s4 += d2 * d2;
  }
  return {static_cast<double>(mean), static_cast<double>(s2 / n), static_cast<double>(s3 / n),
          static_cast<double>(s4 / n)};
}

namespace {

// kappa2 indistinguishable from rounding noise of a constant sample set
bool flat(const CentralMoments& m) {
  const double tol = 64.0 * std::numeric_limits<double>::epsilon() * std::abs(m.mean);
  return m.k2 <= tol * tol;
}

}  // namespace

Statistic skewness(std::span<const double> samples) {
  if (samples.size() < 3) throw ParameterError("skewness needs at least 3 samples");
  const CentralMoments m = central_moments(samples);
  if (flat(m)) return {0.0, true};
  return {m.k3 / std::pow(m.k2, 1.5), false};
}

Statistic excess_kurtosis(std::span<const double> samples) {
  if (samples.size() < 4) throw ParameterError("excess kurtosis needs at least 4 samples");
  const CentralMoments m = central_moments(samples);
  if (flat(m)) return {0.0, true};
  return {m.k4 / (m.k2 * m.k2) - 3.0, false};
}

double scott_bandwidth(std::span<const double> samples, double floor) {
  if (samples.empty()) throw ParameterError("bandwidth of an empty sample set");
  const std::size_t n = samples.size();
  double h = 0.0;
  if (n > 1) {
    const CentralMoments m = central_moments(samples);
    const double sd = std::sqrt(m.k2 * static_cast<double>(n) / static_cast<double>(n - 1));
    h = sd * std::pow(static_cast<double>(n), -0.2);
  }
  return std::max(h, floor);
}

Density kde(std::span<const double> samples, const KdeOptions& options) {
  if (samples.empty()) throw ParameterError("kde needs at least one sample");
  if (options.points < 2) throw ParameterError("kde grid needs at least 2 points");
  for (double x : samples)
    if (!std::isfinite(x)) throw NumericError("kde sample is not finite");
  Density d;
  d.bandwidth = scott_bandwidth(samples, options.bandwidth_floor);
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *lo_it - options.span_bandwidths * d.bandwidth;
  const double hi = *hi_it + options.span_bandwidths * d.bandwidth;
  const double step = (hi - lo) / static_cast<double>(options.points - 1);
  d.grid.resize(options.points);
  d.values.assign(options.points, 0.0);
  const double norm = 1.0 / (static_cast<double>(samples.size()) * d.bandwidth * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t i = 0; i < options.points; ++i) {
    d.grid[i] = lo + step * static_cast<double>(i);
    double acc = 0.0;
    for (double x : samples) {
      const double z = (d.grid[i] - x) / d.bandwidth;
      acc += std::exp(-0.5 * z * z);
    }
    d.values[i] = acc * norm;
  }
  const double area = trapezoid_integral(d);
  if (area > 0.0)
    for (double& v : d.values) v /= area;
  return d;
}

double trapezoid_integral(const Density& d) {
  double area = 0.0;
  for (std::size_t i = 1; i < d.grid.size(); ++i)
    area += 0.5 * (d.values[i] + d.values[i - 1]) * (d.grid[i] - d.grid[i - 1]);
  return area;
}

std::vector<double> modes(const Density& d, double relative_floor) {
  std::vector<double> out;
  const std::size_t n = d.values.size();
  if (n == 0) return out;
  const double peak = *std::max_element(d.values.begin(), d.values.end());
  std::size_t i = 0;
  while (i < n) {
    // plateau [i, j)
    std::size_t j = i + 1;
    while (j < n && d.values[j] == d.values[i]) ++j;
    const bool rises = i == 0 || d.values[i - 1] < d.values[i];
    const bool falls = j == n || d.values[j] < d.values[i];
    if (rises && falls && d.values[i] >= relative_floor * peak && d.values[i] > 0.0)
      out.push_back(0.5 * (d.grid[i] + d.grid[j - 1]));
    i = j;
  }
  return out;
}

std::string to_string(Shape s) {
  switch (s) {
    case Shape::A: return "A";
    case Shape::B: return "B";
    case Shape::C: return "C";
    case Shape::D: return "D";
    case Shape::other: return "other";
  }
  return "other";
}

Shape classify_shape(const Density& d, double skew) {
  const std::vector<double> m = modes(d);
  if (m.empty()) return Shape::other;
  if (m.back() - m.front() > 0.4) return Shape::D;
  if (m.size() > 1) return Shape::other;
  const double mode = m.front();
  if (mode > 0.8) return skew < 0.0 ? Shape::A : Shape::other;
  if (mode < 0.2) return skew > 0.0 ? Shape::B : Shape::other;
  return Shape::C;
}

DropDistribution describe(double k, std::vector<double> samples, const KdeOptions& options) {
  DropDistribution out;
  out.k = k;
  out.density = kde(samples, options);
  out.skew = samples.size() >= 3 ? skewness(samples) : Statistic{0.0, true};
  out.ekurt = samples.size() >= 4 ? excess_kurtosis(samples) : Statistic{0.0, true};
  out.shape = classify_shape(out.density, out.skew.value);
  out.samples = std::move(samples);
  return out;
}

void save_density_csv(const std::string& path, const Density& d) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write " + path);
  out << "grid,density\n";
  for (std::size_t i = 0; i < d.grid.size(); ++i) out << fmt::format("{},{}\n", d.grid[i], d.values[i]);
}

}  // namespace attreval::stats
