#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "attreval/attribution.hpp"
#include "attreval/classifier.hpp"
#include "attreval/corruption.hpp"
#include "attreval/dataset.hpp"
#include "attreval/metrics.hpp"
#include "attreval/scorer.hpp"

namespace attreval::pipeline {

inline constexpr const char* kOutputEnv = "ATTREVAL_OUT";

struct DatasetSection {
  std::string source = "synthetic";  // synthetic | csv
  data::SyntheticConfig synthetic;
  std::optional<double> snr_db;
  std::string csv_path;
  std::string csv_label_column = "label";
  std::size_t csv_channels = 0;
  std::size_t csv_length = 0;
  double train_fraction = 0.7;
  double validation_fraction = 0.1;
};

struct ModelSection {
  std::string source = "train";  // train | external
  std::string command;           // external scorer command line
  model::TrainConfig train;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::size_t repetitions = 5;
  std::size_t max_samples = 200;  // evaluation subset of the test split; 0 keeps all
  std::string output = "out";
  DatasetSection dataset;
  ModelSection model;
  std::vector<attribution::Method> methods;
  attribution::AttributionParams attribution;
  std::vector<double> k_grid = corruption::default_k_grid();
  bool restrict_correct = false;
  double sample_report_k = 0.15;
  std::size_t sample_report_count = 4;
  std::string sample_report_method = "oracle";

  void validate() const;
  // Every setting that influences results, one "key = value" per line.
  std::string canonical() const;
  // FNV-1a 64 of canonical(), as 16 hex digits.
  std::string hash() const;
};

// INI file with [run], [dataset], [model], [methods], [attribution],
// [corruption] and [report] sections. Unknown keys are rejected. Relative
// csv paths resolve against the config file's directory.
PipelineConfig load_config(const std::string& path);
PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});

std::uint64_t fnv1a64(const std::string& text);

struct RunOptions {
  std::string output_root;  // empty: $ATTREVAL_OUT, else the config's output
  std::size_t jobs = 0;     // 0: available cores
  bool force = false;       // accept artifacts written under another config hash
  bool rerun = false;       // recompute stages whose artifacts already exist
  std::function<void(const std::string&)> log;
};

std::filesystem::path resolve_output_root(const PipelineConfig& config, const RunOptions& options);

struct MethodEvaluation {
  std::string method;
  // [repetition][k]
  std::vector<std::vector<double>> skew;
  std::vector<std::vector<double>> ekurt;
  std::vector<std::vector<corruption::CurvePoint>> top_curves;
  std::vector<std::vector<corruption::CurvePoint>> bot_curves;
};

struct Evaluation {
  metrics::MetricTable table;
  std::vector<double> k_grid;
  std::vector<MethodEvaluation> methods;
};

class Pipeline {
 public:
  Pipeline(PipelineConfig config, RunOptions options = {});
  ~Pipeline();

  const PipelineConfig& config() const { return config_; }
  const std::string& hash() const { return hash_; }
  const std::filesystem::path& dir() const { return dir_; }

  void generate();
  void train();
  void attribute();
  void corrupt();
  Evaluation evaluate();
  void report();
  Evaluation run_all();

  // Artifacts of earlier stages, loaded on demand.
  std::vector<data::TimeSeriesSample> evaluation_samples();
  const scorer::Scorer& scorer();

 private:
  void log(const std::string& message) const;
  std::filesystem::path stage_dir(const std::string& stage) const;
  bool cached(const std::filesystem::path& dir) const;
  void require(const std::filesystem::path& dir, const std::string& producer) const;
  void check_hash(const std::string& found, const std::filesystem::path& where) const;
  void write_manifest(const std::filesystem::path& dir, const std::string& stage, const std::string& extra_json) const;
  std::filesystem::path relevance_path(attribution::Method method, std::size_t repetition) const;
  std::vector<attribution::RelevanceMap> load_maps(attribution::Method method, std::size_t repetition) const;
  std::vector<corruption::ScoreDropRecord> load_drops(attribution::Method method, std::size_t repetition) const;
  std::size_t jobs() const;
  Evaluation compute_evaluation();

  PipelineConfig config_;
  RunOptions options_;
  std::string hash_;
  std::filesystem::path dir_;
  std::unique_ptr<model::TrainedModel> model_;
  std::unique_ptr<scorer::Scorer> scorer_;
};

// Writes via a temporary file and rename so readers never see partial output.
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace attreval::pipeline
