#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "attreval/tensor.hpp"

namespace attreval::data {

// One multivariate series with its class. Synthetic samples also carry the
// injected block frequencies and the mask of the two discriminative blocks.
struct TimeSeriesSample {
  std::uint64_t id = 0;
  Tensor values;  // [M, T]
  std::size_t label = 0;
  std::optional<double> f1;
  std::optional<double> f2;
  std::vector<std::size_t> block_offsets;  // start index of each injected block
  std::size_t block_length = 0;
  std::vector<std::uint8_t> block_mask;  // [M * T], 1 on injected blocks; empty if unknown

  std::size_t channels() const { return values.dim(0); }
  std::size_t length() const { return values.dim(1); }
  bool has_frequencies() const { return f1.has_value() && f2.has_value(); }
};

struct SyntheticConfig {
  std::size_t n_samples = 7500;
  std::size_t length = 500;    // T
  std::size_t channels = 4;    // M
  double base_freq_low = 2.0;
  double base_freq_high = 5.0;
  double block_freq_low = 10.0;
  double block_freq_high = 50.0;
  std::size_t block_length = 100;
  double threshold = 60.0;
  std::uint64_t seed = 0;
  std::size_t max_rejections_per_sample = 1000;

  void validate() const;
};

// Class 1 iff f1 + f2 >= threshold.
std::size_t label_for(double f1, double f2, double threshold);

// Normalised distance to the lower edge of the frequency-sum range, in [0, 1].
double normalized_frequency_sum(double f1, double f2, const SyntheticConfig& config = {});

std::vector<TimeSeriesSample> generate(const SyntheticConfig& config);

// Adds white Gaussian noise so each sample's SNR equals `snr_db`.
std::vector<TimeSeriesSample> add_noise(std::vector<TimeSeriesSample> samples, double snr_db, std::uint64_t seed);

double signal_power(const Tensor& values);

struct Split {
  std::vector<TimeSeriesSample> train;
  std::vector<TimeSeriesSample> validation;
  std::vector<TimeSeriesSample> test;
};

// Deterministic shuffled split; fractions default to 70/10/20.
Split split_dataset(std::vector<TimeSeriesSample> samples, std::uint64_t seed, double train_fraction = 0.7,
                    double validation_fraction = 0.1);

// ------------------------------------------------------------------- CSV

struct CsvSchema {
  std::size_t channels = 0;  // M
  std::size_t length = 0;    // T
  std::string label_column = "label";
  // Known labels in class order. Empty: discovered from the file and sorted
  // (numerically when every label parses as a number).
  std::vector<std::string> labels;
};

struct LoadedCsv {
  std::vector<TimeSeriesSample> samples;
  std::vector<std::string> labels;  // class index -> original label text
};

LoadedCsv load_csv(const std::string& path, const CsvSchema& schema);
void save_csv(const std::string& path, const std::vector<TimeSeriesSample>& samples);

// Sidecar with f1, f2 and block offsets per sample.
void save_synthetic_metadata(const std::string& path, const std::vector<TimeSeriesSample>& samples,
                             const std::string& config_hash = "");
// Restores f1/f2/offsets/mask onto samples loaded from CSV (matched by id).
void apply_synthetic_metadata(const std::string& path, std::vector<TimeSeriesSample>& samples);

// Lossless binary storage: a JSON header line, then one record per sample.
struct SampleFile {
  std::string header_json;
  std::vector<TimeSeriesSample> samples;
};

void save_samples(const std::string& path, const std::vector<TimeSeriesSample>& samples,
                  const std::string& config_hash = "");
SampleFile load_samples(const std::string& path);

}  // namespace attreval::data
