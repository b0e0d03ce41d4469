#include "attreval/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "attreval/errors.hpp"
#include "attreval/rng.hpp"

namespace attreval::data {

namespace {

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

std::optional<double> parse_double(std::string_view cell) {
  while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
  while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc{} || ptr != cell.data() + cell.size()) return std::nullopt;
  return value;
}

std::vector<std::uint8_t> make_block_mask(std::size_t channels, std::size_t length,
                                          const std::vector<std::size_t>& offsets, std::size_t block_length) {
  std::vector<std::uint8_t> mask(channels * length, 0);
  for (std::size_t m = 0; m < channels; ++m)
    for (std::size_t start : offsets)
      for (std::size_t t = start; t < std::min(length, start + block_length); ++t) mask[m * length + t] = 1;
  return mask;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (n_samples == 0) throw ConfigError("synthetic n_samples must be >= 1");
  if (channels == 0 || length == 0) throw ConfigError("synthetic M and T must be >= 1");
  if (block_length == 0 || 2 * block_length > length) {
    throw ConfigError("synthetic block_length must satisfy 2*block_length <= T (block_length=" +
                      std::to_string(block_length) + ", T=" + std::to_string(length) + ")");
  }
  if (!(base_freq_low <= base_freq_high) || !(block_freq_low <= block_freq_high)) {
    throw ConfigError("synthetic frequency ranges must be ordered");
  }
  if (threshold < 2.0 * block_freq_low || threshold > 2.0 * block_freq_high) {
    throw ConfigError("synthetic threshold must lie in [2*block_freq_low, 2*block_freq_high]");
  }
}

std::size_t label_for(double f1, double f2, double threshold) { return f1 + f2 >= threshold ? 1 : 0; }

double normalized_frequency_sum(double f1, double f2, const SyntheticConfig& config) {
  const double lo = 2.0 * config.block_freq_low;
  const double hi = 2.0 * config.block_freq_high;
  return (f1 + f2 - lo) / (hi - lo);
}

std::vector<TimeSeriesSample> generate(const SyntheticConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const std::size_t T = config.length;
  const std::size_t M = config.channels;
  const std::size_t L = config.block_length;
  const std::size_t quota1 = config.n_samples / 2;
  const std::size_t quota0 = config.n_samples - quota1;
  std::size_t count0 = 0;
  std::size_t count1 = 0;
  const double two_pi = 2.0 * std::numbers::pi;

  std::vector<TimeSeriesSample> out;
  out.reserve(config.n_samples);
  for (std::size_t i = 0; i < config.n_samples; ++i) {
    double f1 = 0.0;
    double f2 = 0.0;
    std::size_t label = 0;
    std::size_t attempts = 0;
    while (true) {
      f1 = uniform(rng, config.block_freq_low, config.block_freq_high);
      f2 = uniform(rng, config.block_freq_low, config.block_freq_high);
      label = label_for(f1, f2, config.threshold);
      if ((label == 0 && count0 < quota0) || (label == 1 && count1 < quota1)) break;
      if (++attempts >= config.max_rejections_per_sample) {
        throw GenerationError("cannot balance classes at threshold " + std::to_string(config.threshold) +
                              " after " + std::to_string(attempts) + " rejected draws for sample " +
                              std::to_string(i));
      }
    }
    (label == 0 ? count0 : count1)++;

    const double base = uniform(rng, config.base_freq_low, config.base_freq_high);
    std::vector<double> phases(M);
    for (double& p : phases) p = uniform(rng, 0.0, two_pi);

    std::uniform_int_distribution<std::size_t> start_dist(0, T - L);
    const std::size_t start1 = start_dist(rng);
    std::size_t start2 = start_dist(rng);
    while (start2 + L > start1 && start1 + L > start2) start2 = start_dist(rng);

    TimeSeriesSample s;
    s.id = i;
    s.label = label;
    s.f1 = f1;
    s.f2 = f2;
    s.block_offsets = {start1, start2};
    s.block_length = L;
    s.values = Tensor({M, T});
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t t = 0; t < T; ++t) {
        const double time = static_cast<double>(t) / static_cast<double>(T);
        double v = std::sin(two_pi * base * time + phases[m]);
        if (t >= start1 && t < start1 + L)
          v += std::sin(two_pi * f1 * static_cast<double>(t - start1) / static_cast<double>(T));
        if (t >= start2 && t < start2 + L)
          v += std::sin(two_pi * f2 * static_cast<double>(t - start2) / static_cast<double>(T));
        s.values.at(m, t) = v;
      }
    }
    s.block_mask = make_block_mask(M, T, s.block_offsets, L);
    out.push_back(std::move(s));
  }
  return out;
}

double signal_power(const Tensor& values) {
  double acc = 0.0;
  for (double v : values.values()) acc += v * v;
  return values.empty() ? 0.0 : acc / static_cast<double>(values.size());
}

std::vector<TimeSeriesSample> add_noise(std::vector<TimeSeriesSample> samples, double snr_db, std::uint64_t seed) {
  if (!std::isfinite(snr_db)) throw ParameterError("snr_db must be finite");
  for (auto& s : samples) {
    Rng rng(derive_seed(seed, {s.id}));
    const double noise_var = signal_power(s.values) / std::pow(10.0, snr_db / 10.0);
    const double sd = std::sqrt(noise_var);
    for (double& v : s.values.values()) v += sd * standard_normal(rng);
  }
  return samples;
}

Split split_dataset(std::vector<TimeSeriesSample> samples, std::uint64_t seed, double train_fraction,
                    double validation_fraction) {
  if (train_fraction < 0 || validation_fraction < 0 || train_fraction + validation_fraction > 1.0) {
    throw ConfigError("invalid split fractions");
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {0x5b117}));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(samples.size());
  const auto n_train = static_cast<std::size_t>(std::llround(n * train_fraction));
  const auto n_val = std::min(samples.size() - n_train, static_cast<std::size_t>(std::llround(n * validation_fraction)));
  Split split;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& dst = i < n_train ? split.train : (i < n_train + n_val ? split.validation : split.test);
    dst.push_back(std::move(samples[order[i]]));
  }
  auto by_id = [](const TimeSeriesSample& a, const TimeSeriesSample& b) { return a.id < b.id; };
  std::sort(split.train.begin(), split.train.end(), by_id);
  std::sort(split.validation.begin(), split.validation.end(), by_id);
  std::sort(split.test.begin(), split.test.end(), by_id);
  return split;
}

// ------------------------------------------------------------------- CSV

LoadedCsv load_csv(const std::string& path, const CsvSchema& schema) {
  if (schema.channels == 0 || schema.length == 0) throw ConfigError("CSV schema must declare M and T");
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot open CSV file " + path);

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ":1: missing header row");
  const auto header = split_line(line);
  const std::size_t n_values = schema.channels * schema.length;
  std::vector<std::ptrdiff_t> column_target(header.size(), -1);
  std::ptrdiff_t label_col = -1;
  std::vector<bool> seen(n_values, false);
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = trim(header[c]);
    if (name == schema.label_column) {
      label_col = static_cast<std::ptrdiff_t>(c);
      continue;
    }
    unsigned m = 0;
    unsigned t = 0;
    char tail = 0;
    if (std::sscanf(name.c_str(), "m%u_t%u%c", &m, &t, &tail) != 2 || m >= schema.channels || t >= schema.length) {
      throw ParseError(path + ":1: unexpected column '" + name + "'");
    }
    const std::size_t target = m * schema.length + t;
    if (seen[target]) throw ParseError(path + ":1: duplicate column '" + name + "'");
    seen[target] = true;
    column_target[c] = static_cast<std::ptrdiff_t>(target);
  }
  if (label_col < 0) throw ParseError(path + ":1: missing label column '" + schema.label_column + "'");
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw ParseError(path + ":1: header does not cover all m*_t* columns for M=" + std::to_string(schema.channels) +
                     ", T=" + std::to_string(schema.length));
  }

  std::vector<std::pair<Tensor, std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " cells, found " + std::to_string(cells.size()));
    }
    Tensor values({schema.channels, schema.length});
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (column_target[c] < 0) continue;
      const auto v = parse_double(cells[c]);
      if (!v) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": non-numeric cell '" + std::string(cells[c]) +
                         "' in column " + trim(header[c]));
      }
      values[static_cast<std::size_t>(column_target[c])] = *v;
    }
    std::string label = trim(cells[static_cast<std::size_t>(label_col)]);
    if (!schema.labels.empty() &&
        std::find(schema.labels.begin(), schema.labels.end(), label) == schema.labels.end()) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": unknown label '" + label + "'");
    }
    rows.emplace_back(std::move(values), std::move(label));
  }

  LoadedCsv loaded;
  loaded.labels = schema.labels;
  if (loaded.labels.empty()) {
    for (const auto& r : rows)
      if (std::find(loaded.labels.begin(), loaded.labels.end(), r.second) == loaded.labels.end())
        loaded.labels.push_back(r.second);
    const bool numeric = std::all_of(loaded.labels.begin(), loaded.labels.end(),
                                      [](const std::string& l) { return parse_double(l).has_value(); });
    if (numeric) {
      std::sort(loaded.labels.begin(), loaded.labels.end(),
                [](const std::string& a, const std::string& b) { return *parse_double(a) < *parse_double(b); });
    } else {
      std::sort(loaded.labels.begin(), loaded.labels.end());
    }
  }
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < loaded.labels.size(); ++i) index[loaded.labels[i]] = i;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    TimeSeriesSample s;
    s.id = i;
    s.values = std::move(rows[i].first);
    s.label = index.at(rows[i].second);
    loaded.samples.push_back(std::move(s));
  }
  return loaded;
}

void save_csv(const std::string& path, const std::vector<TimeSeriesSample>& samples) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write CSV file " + path);
  if (samples.empty()) throw ConfigError("refusing to write an empty dataset");
  const std::size_t M = samples.front().channels();
  const std::size_t T = samples.front().length();
  fmt::memory_buffer buf;
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t t = 0; t < T; ++t) fmt::format_to(std::back_inserter(buf), "m{}_t{},", m, t);
  fmt::format_to(std::back_inserter(buf), "label\n");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  for (const auto& s : samples) {
    buf.clear();
    for (double v : s.values.values()) fmt::format_to(std::back_inserter(buf), "{},", v);
    fmt::format_to(std::back_inserter(buf), "{}\n", s.label);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

void save_synthetic_metadata(const std::string& path, const std::vector<TimeSeriesSample>& samples,
                             const std::string& config_hash) {
  nlohmann::json root;
  root["version"] = 1;
  root["config_hash"] = config_hash;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& s : samples) {
    if (!s.has_frequencies()) continue;
    list.push_back({{"id", s.id},
                    {"f1", *s.f1},
                    {"f2", *s.f2},
                    {"block_offsets", s.block_offsets},
                    {"block_length", s.block_length}});
  }
  root["samples"] = std::move(list);
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write metadata " + path);
  out << root.dump(1) << '\n';
}

void apply_synthetic_metadata(const std::string& path, std::vector<TimeSeriesSample>& samples) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot read metadata " + path);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  std::unordered_map<std::uint64_t, const nlohmann::json*> by_id;
  for (const auto& entry : root.at("samples")) by_id[entry.at("id").get<std::uint64_t>()] = &entry;
  for (auto& s : samples) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) continue;
    const auto& e = *it->second;
    s.f1 = e.at("f1").get<double>();
    s.f2 = e.at("f2").get<double>();
    s.block_offsets = e.at("block_offsets").get<std::vector<std::size_t>>();
    s.block_length = e.at("block_length").get<std::size_t>();
    s.block_mask = make_block_mask(s.channels(), s.length(), s.block_offsets, s.block_length);
  }
}

namespace {

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError(path + ": truncated sample record");
  return v;
}

}  // namespace

void save_samples(const std::string& path, const std::vector<TimeSeriesSample>& samples,
                  const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot write samples " + path);
  nlohmann::json header{{"format", "attreval-samples"}, {"version", 1}, {"config_hash", config_hash},
                        {"count", samples.size()}};
  out << header.dump() << '\n';
  for (const auto& s : samples) {
    put<std::uint64_t>(out, s.id);
    put<std::uint64_t>(out, s.label);
    put<std::uint64_t>(out, s.channels());
    put<std::uint64_t>(out, s.length());
    put<std::uint8_t>(out, s.has_frequencies() ? 1 : 0);
    put<double>(out, s.f1.value_or(0.0));
    put<double>(out, s.f2.value_or(0.0));
    put<std::uint64_t>(out, s.block_length);
    put<std::uint64_t>(out, s.block_offsets.size());
    for (std::size_t o : s.block_offsets) put<std::uint64_t>(out, o);
    put<std::uint8_t>(out, s.block_mask.empty() ? 0 : 1);
    if (!s.block_mask.empty()) out.write(reinterpret_cast<const char*>(s.block_mask.data()), static_cast<std::streamsize>(s.block_mask.size()));
    out.write(reinterpret_cast<const char*>(s.values.data()), static_cast<std::streamsize>(s.values.size() * sizeof(double)));
  }
  if (!out) throw ArtifactError("failed writing samples " + path);
}

SampleFile load_samples(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("missing samples file " + path);
  SampleFile file;
  std::getline(in, file.header_json);
  std::size_t count = 0;
  try {
    const auto header = nlohmann::json::parse(file.header_json);
    if (header.at("format") != "attreval-samples" || header.at("version") != 1) throw ParseError(path + ": not a samples file");
    count = header.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad header: " + e.what());
  }
  file.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    TimeSeriesSample s;
    s.id = take<std::uint64_t>(in, path);
    s.label = take<std::uint64_t>(in, path);
    const auto m = take<std::uint64_t>(in, path);
    const auto t = take<std::uint64_t>(in, path);
    if (m == 0 || t == 0 || m * t > (std::size_t{1} << 28)) throw ParseError(path + ": implausible sample shape");
    const bool has_freq = take<std::uint8_t>(in, path) != 0;
    const double f1 = take<double>(in, path);
    const double f2 = take<double>(in, path);
    if (has_freq) {
      s.f1 = f1;
      s.f2 = f2;
    }
    s.block_length = take<std::uint64_t>(in, path);
    const auto offsets = take<std::uint64_t>(in, path);
    if (offsets > t) throw ParseError(path + ": implausible block count");
    for (std::size_t j = 0; j < offsets; ++j) s.block_offsets.push_back(take<std::uint64_t>(in, path));
    if (take<std::uint8_t>(in, path) != 0) {
      s.block_mask.resize(m * t);
      if (!in.read(reinterpret_cast<char*>(s.block_mask.data()), static_cast<std::streamsize>(m * t))) {
        throw ParseError(path + ": truncated sample record");
      }
    }
    s.values = Tensor({m, t});
    if (!in.read(reinterpret_cast<char*>(s.values.data()), static_cast<std::streamsize>(m * t * sizeof(double)))) {
      throw ParseError(path + ": truncated sample record");
    }
    file.samples.push_back(std::move(s));
  }
  return file;
}

}  // namespace attreval::data
