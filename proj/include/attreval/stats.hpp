#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace attreval::stats {

// Biased central moments kappa_i = (1/L) sum (x - mean)^i.
struct CentralMoments {
  double mean = 0.0;
  double k2 = 0.0;
  double k3 = 0.0;
  double k4 = 0.0;
};

CentralMoments central_moments(std::span<const double> samples);

struct Statistic {
  double value = 0.0;
  bool degenerate = false;  // kappa2 == 0; value is then 0
};

// kappa3 / kappa2^(3/2); needs at least 3 samples.
Statistic skewness(std::span<const double> samples);
// kappa4 / kappa2^2 - 3; needs at least 4 samples.
Statistic excess_kurtosis(std::span<const double> samples);

struct KdeOptions {
  std::size_t points = 512;
  double span_bandwidths = 3.0;  // grid runs from min - span*h to max + span*h
  double bandwidth_floor = 1e-3;
};

struct Density {
  std::vector<double> grid;
  std::vector<double> values;
  double bandwidth = 0.0;
};

// Scott's rule: h = std * L^(-1/5), floored.
double scott_bandwidth(std::span<const double> samples, double floor = 1e-3);

// Gaussian KDE on an even grid, normalised so its trapezoid integral is 1.
Density kde(std::span<const double> samples, const KdeOptions& options = {});

double trapezoid_integral(const Density& d);

// Grid positions of local maxima above `relative_floor` times the peak.
std::vector<double> modes(const Density& d, double relative_floor = 0.1);

enum class Shape { A, B, C, D, other };
std::string to_string(Shape s);

// A: one mode above 0.8 and negative skew; B: one mode below 0.2 and positive
// skew; D: two modes more than 0.4 apart; C: one mode in [0.2, 0.8].
Shape classify_shape(const Density& d, double skew);

struct DropDistribution {
  double k = 0.0;
  std::vector<double> samples;
  Density density;
  Statistic skew;
  Statistic ekurt;
  Shape shape = Shape::other;
};

DropDistribution describe(double k, std::vector<double> samples, const KdeOptions& options = {});

void save_density_csv(const std::string& path, const Density& d);

}  // namespace attreval::stats
