#include "attreval/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "attreval/errors.hpp"
#include "attreval/parallel.hpp"
#include "attreval/report.hpp"
#include "attreval/rng.hpp"
#include "attreval/stats.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace attreval::pipeline {

namespace {

// Stream tags for derive_seed; fixed forever so old runs stay reproducible.
enum SeedStream : std::uint64_t { kDataSeed = 1, kSplitSeed, kTrainSeed, kAttributionSeed, kCorruptionSeed, kNoiseSeed };

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

class IniReader {
 public:
  explicit IniReader(const boost::property_tree::ptree& tree) : tree_(tree) {}

  std::optional<std::string> raw(const std::string& section, const std::string& key) {
    known_.insert(section + "." + key);
    const auto sec = tree_.get_child_optional(section);
    if (!sec) return std::nullopt;
    const auto value = sec->get_optional<std::string>(key);
    if (!value) return std::nullopt;
    return trim(*value);
  }

  std::string text(const std::string& section, const std::string& key, const std::string& fallback) {
    auto v = raw(section, key);
    return v ? *v : fallback;
  }

  double number(const std::string& section, const std::string& key, double fallback) {
    auto v = raw(section, key);
    if (!v || v->empty()) return fallback;
    try {
      std::size_t used = 0;
      const double d = std::stod(*v, &used);
      if (used == v->size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError(fmt::format("[{}] {} = '{}' is not a number", section, key, *v));
  }

  std::uint64_t count(const std::string& section, const std::string& key, std::uint64_t fallback) {
    auto v = raw(section, key);
    if (!v || v->empty()) return fallback;
    try {
      std::size_t used = 0;
      if (!v->empty() && (*v)[0] != '-') {
        const auto n = std::stoull(*v, &used);
        if (used == v->size()) return n;
      }
    } catch (const std::exception&) {
    }
    throw ConfigError(fmt::format("[{}] {} = '{}' is not a non-negative integer", section, key, *v));
  }

  bool flag(const std::string& section, const std::string& key, bool fallback) {
    auto v = raw(section, key);
    if (!v || v->empty()) return fallback;
    if (*v == "true" || *v == "yes" || *v == "1" || *v == "on") return true;
    if (*v == "false" || *v == "no" || *v == "0" || *v == "off") return false;
    throw ConfigError(fmt::format("[{}] {} = '{}' is not a boolean", section, key, *v));
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty() && !body.data().empty()) {
        throw ConfigError(fmt::format("config key '{}' lies outside any section", section));
      }
      for (const auto& entry : body) {
        if (!known_.count(section + "." + entry.first)) {
          throw ConfigError(fmt::format("unknown config key [{}] {}", section, entry.first));
        }
      }
    }
  }

 private:
  const boost::property_tree::ptree& tree_;
  std::set<std::string> known_;
};

template <typename F>
auto wrap_enum(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string with_hash(std::string svg, const std::string& hash) {
  const auto pos = svg.find("<svg");
  const auto end = svg.find(">\n", pos);
  if (pos == std::string::npos || end == std::string::npos) return svg;
  svg.insert(end + 2, "<desc>config-hash " + hash + "</desc>\n");
  return svg;
}

std::string k_label(double k) { return fmt::format("{:.2f}", k); }

}  // namespace

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ArtifactError("cannot write " + path.string());
    out << content;
    if (!out) throw ArtifactError("failed writing " + path.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------- config

PipelineConfig parse_config(const std::string& text, const fs::path& base_dir) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  IniReader r(tree);
  PipelineConfig c;

  c.seed = r.count("run", "seed", c.seed);
  c.repetitions = r.count("run", "repetitions", c.repetitions);
  c.max_samples = r.count("run", "max_samples", c.max_samples);
  c.output = r.text("run", "output", c.output);

  auto& d = c.dataset;
  auto& s = d.synthetic;
  d.source = r.text("dataset", "source", d.source);
  s.n_samples = r.count("dataset", "n_samples", s.n_samples);
  s.length = r.count("dataset", "length", s.length);
  s.channels = r.count("dataset", "channels", s.channels);
  s.base_freq_low = r.number("dataset", "base_freq_low", s.base_freq_low);
  s.base_freq_high = r.number("dataset", "base_freq_high", s.base_freq_high);
  s.block_freq_low = r.number("dataset", "block_freq_low", s.block_freq_low);
  s.block_freq_high = r.number("dataset", "block_freq_high", s.block_freq_high);
  s.block_length = r.count("dataset", "block_length", s.block_length);
  s.threshold = r.number("dataset", "threshold", s.threshold);
  if (auto snr = r.raw("dataset", "snr_db"); snr && !snr->empty()) d.snr_db = r.number("dataset", "snr_db", 0.0);
  d.csv_path = r.text("dataset", "csv_path", d.csv_path);
  if (!d.csv_path.empty() && fs::path(d.csv_path).is_relative() && !base_dir.empty()) {
    d.csv_path = (base_dir / d.csv_path).lexically_normal().string();
  }
  d.csv_label_column = r.text("dataset", "csv_label_column", d.csv_label_column);
  d.csv_channels = r.count("dataset", "csv_channels", d.csv_channels);
  d.csv_length = r.count("dataset", "csv_length", d.csv_length);
  d.train_fraction = r.number("dataset", "train_fraction", d.train_fraction);
  d.validation_fraction = r.number("dataset", "validation_fraction", d.validation_fraction);

  auto& m = c.model;
  auto& t = m.train;
  auto& a = t.architecture;
  m.source = r.text("model", "source", m.source);
  m.command = r.text("model", "command", m.command);
  a.conv_layers = r.count("model", "conv_layers", a.conv_layers);
  a.conv_units = r.count("model", "conv_units", a.conv_units);
  a.kernel_size = r.count("model", "kernel_size", a.kernel_size);
  a.stride = r.count("model", "stride", a.stride);
  a.dropout = r.number("model", "dropout", a.dropout);
  a.dense_units = r.count("model", "dense_units", a.dense_units);
  t.epochs = r.count("model", "epochs", t.epochs);
  t.batch_size = r.count("model", "batch_size", t.batch_size);
  t.learning_rate = r.number("model", "learning_rate", t.learning_rate);
  t.weight_decay = r.number("model", "weight_decay", t.weight_decay);
  t.momentum = r.number("model", "momentum", t.momentum);
  t.augmentation_fraction = r.number("model", "augmentation_fraction", t.augmentation_fraction);
  t.patience = r.count("model", "patience", t.patience);
  if (auto v = r.raw("model", "optimizer")) t.optimizer = wrap_enum("[model] optimizer", [&] { return model::optimizer_from_string(*v); });
  if (auto v = r.raw("model", "calibration")) t.calibration = wrap_enum("[model] calibration", [&] { return model::calibration_from_string(*v); });

  const auto method_list = r.text("methods", "list", "");
  for (const auto& name : split_list(method_list)) {
    c.methods.push_back(wrap_enum("[methods] list", [&] { return attribution::method_from_string(name); }));
  }

  auto& p = c.attribution;
  if (auto v = r.raw("attribution", "baseline")) p.baseline = wrap_enum("[attribution] baseline", [&] { return attribution::baseline_from_string(*v); });
  p.ig_steps = r.count("attribution", "ig_steps", p.ig_steps);
  p.gs_baseline_count = r.count("attribution", "gs_baseline_count", p.gs_baseline_count);
  p.gs_noise_std = r.number("attribution", "gs_noise_std", p.gs_noise_std);
  p.svs_permutations = r.count("attribution", "svs_permutations", p.svs_permutations);
  p.ks_coalitions = r.count("attribution", "ks_coalitions", p.ks_coalitions);
  if (auto v = r.raw("attribution", "grouping")) p.grouping = wrap_enum("[attribution] grouping", [&] { return attribution::grouping_from_string(*v); });
  p.segment_length = r.count("attribution", "segment_length", p.segment_length);
  if (auto v = r.raw("attribution", "sampling")) p.sampling = wrap_enum("[attribution] sampling", [&] { return attribution::sampling_from_string(*v); });
  p.occlusion_window = r.count("attribution", "occlusion_window", p.occlusion_window);
  p.occlusion_stride = r.count("attribution", "occlusion_stride", p.occlusion_stride);
  if (auto v = r.raw("attribution", "target")) p.target = wrap_enum("[attribution] target", [&] { return autodiff::score_target_from_string(*v); });

  if (auto v = r.raw("corruption", "k_grid"); v && !v->empty()) {
    c.k_grid = wrap_enum("[corruption] k_grid", [&] { return corruption::parse_k_grid(*v); });
  }
  if (r.flag("corruption", "include_k_1", false) && c.k_grid.back() < 1.0) c.k_grid.push_back(1.0);
  c.restrict_correct = r.flag("corruption", "restrict_correct", c.restrict_correct);

  c.sample_report_k = r.number("report", "sample_k", c.sample_report_k);
  c.sample_report_count = r.count("report", "sample_count", c.sample_report_count);
  c.sample_report_method = r.text("report", "sample_method", c.sample_report_method);

  r.reject_unknown();
  return c;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), fs::absolute(path).parent_path());
}

void PipelineConfig::validate() const {
  if (repetitions == 0) throw ConfigError("[run] repetitions must be >= 1");
  if (methods.size() < 2) throw ConfigError("[methods] list needs at least two methods to standardise across");
  std::set<attribution::Method> seen(methods.begin(), methods.end());
  if (seen.size() != methods.size()) throw ConfigError("[methods] list repeats a method");
  if (dataset.source == "synthetic") {
    dataset.synthetic.validate();
    if (dataset.snr_db && !std::isfinite(*dataset.snr_db)) throw ConfigError("[dataset] snr_db must be finite");
  } else if (dataset.source == "csv") {
    if (dataset.csv_path.empty()) throw ConfigError("[dataset] csv_path is required for source = csv");
    if (!fs::exists(dataset.csv_path)) throw ConfigError("[dataset] csv_path does not exist: " + dataset.csv_path);
    if (dataset.csv_channels == 0 || dataset.csv_length == 0) {
      throw ConfigError("[dataset] csv_channels and csv_length are required for source = csv");
    }
    if (seen.count(attribution::Method::oracle)) {
      throw ConfigError("[methods] oracle needs the synthetic dataset's block masks");
    }
  } else {
    throw ConfigError("[dataset] source must be synthetic or csv, got '" + dataset.source + "'");
  }
  if (!(dataset.train_fraction > 0.0) || dataset.validation_fraction < 0.0 ||
      dataset.train_fraction + dataset.validation_fraction >= 1.0) {
    throw ConfigError("[dataset] train/validation fractions must leave a non-empty test split");
  }
  if (model.source == "train") {
    model.train.validate();
  } else if (model.source == "external") {
    if (model.command.empty()) throw ConfigError("[model] command is required for source = external");
    for (auto mth : methods) {
      if (attribution::needs_gradients(mth)) {
        throw ConfigError("[methods] " + attribution::to_string(mth) + " needs gradients, which an external scorer cannot supply");
      }
    }
  } else {
    throw ConfigError("[model] source must be train or external, got '" + model.source + "'");
  }
  try {
    attribution.validate();
    corruption::CorruptionPlan{k_grid, 0}.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (sample_report_count > 0) {
    const bool in_grid = std::any_of(k_grid.begin(), k_grid.end(), [&](double k) { return std::abs(k - sample_report_k) < 1e-9; });
    if (!in_grid) throw ConfigError(fmt::format("[report] sample_k = {} is not on the k grid", sample_report_k));
  }
}

std::string PipelineConfig::canonical() const {
  std::string out;
  auto line = [&](const std::string& key, const auto& value) { out += fmt::format("{} = {}\n", key, value); };
  line("format", 1);
  line("run.seed", seed);
  line("run.repetitions", repetitions);
  line("run.max_samples", max_samples);
  line("dataset.source", dataset.source);
  if (dataset.source == "synthetic") {
    const auto& s = dataset.synthetic;
    line("dataset.n_samples", s.n_samples);
    line("dataset.length", s.length);
    line("dataset.channels", s.channels);
    line("dataset.base_freq", fmt::format("{},{}", s.base_freq_low, s.base_freq_high));
    line("dataset.block_freq", fmt::format("{},{}", s.block_freq_low, s.block_freq_high));
    line("dataset.block_length", s.block_length);
    line("dataset.threshold", s.threshold);
    line("dataset.snr_db", dataset.snr_db ? fmt::format("{}", *dataset.snr_db) : std::string("none"));
  } else {
    line("dataset.csv_path", dataset.csv_path);
    line("dataset.csv_label_column", dataset.csv_label_column);
    line("dataset.csv_shape", fmt::format("{}x{}", dataset.csv_channels, dataset.csv_length));
  }
  line("dataset.fractions", fmt::format("{},{}", dataset.train_fraction, dataset.validation_fraction));
  line("model.source", model.source);
  if (model.source == "external") {
    line("model.command", model.command);
  } else {
    const auto& t = model.train;
    const auto& a = t.architecture;
    line("model.architecture", fmt::format("{},{},{},{},{},{}", a.conv_layers, a.conv_units, a.kernel_size, a.stride,
                                           a.dropout, a.dense_units));
    line("model.epochs", t.epochs);
    line("model.batch_size", t.batch_size);
    line("model.learning_rate", t.learning_rate);
    line("model.weight_decay", t.weight_decay);
    line("model.momentum", t.momentum);
    line("model.optimizer", model::to_string(t.optimizer));
    line("model.augmentation_fraction", t.augmentation_fraction);
    line("model.calibration", model::to_string(t.calibration));
    line("model.patience", t.patience);
  }
  std::string names;
  for (auto mth : methods) names += (names.empty() ? "" : ",") + attribution::to_string(mth);
  line("methods", names);
  line("attribution", attribution::params_json(attribution));
  std::string grid;
  for (double k : k_grid) grid += (grid.empty() ? "" : ",") + fmt::format("{}", k);
  line("corruption.k_grid", grid);
  line("corruption.restrict_correct", restrict_correct);
  line("report.sample", fmt::format("{},{},{}", sample_report_k, sample_report_count, sample_report_method));
  return out;
}

std::string PipelineConfig::hash() const { return fmt::format("{:016x}", fnv1a64(canonical())); }

fs::path resolve_output_root(const PipelineConfig& config, const RunOptions& options) {
  if (!options.output_root.empty()) return options.output_root;
  if (const char* env = std::getenv(kOutputEnv); env && *env) return env;
  return config.output;
}

// ---------------------------------------------------------------- stages

Pipeline::Pipeline(PipelineConfig config, RunOptions options) : config_(std::move(config)), options_(std::move(options)) {
  config_.validate();
  hash_ = config_.hash();
  dir_ = resolve_output_root(config_, options_) / hash_;
}

Pipeline::~Pipeline() = default;

void Pipeline::log(const std::string& message) const {
  if (options_.log) options_.log(message);
}

std::size_t Pipeline::jobs() const { return options_.jobs ? options_.jobs : default_jobs(); }

fs::path Pipeline::stage_dir(const std::string& stage) const { return dir_ / stage; }

bool Pipeline::cached(const fs::path& dir) const {
  if (options_.rerun) return false;
  const auto manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) return false;
  check_hash(read_json(manifest).value("config_hash", ""), manifest);
  return true;
}

void Pipeline::require(const fs::path& dir, const std::string& producer) const {
  const auto manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) {
    throw ArtifactError(fmt::format("missing artifacts in {} (run the {} stage first)", dir.string(), producer));
  }
  check_hash(read_json(manifest).value("config_hash", ""), manifest);
}

void Pipeline::check_hash(const std::string& found, const fs::path& where) const {
  if (found == hash_ || options_.force) return;
  throw ArtifactError(fmt::format("{} was written under config hash '{}', current config is '{}' (use --force to accept)",
                                  where.string(), found, hash_));
}

void Pipeline::write_manifest(const fs::path& dir, const std::string& stage, const std::string& extra_json) const {
  json m = json::parse(extra_json);
  m["stage"] = stage;
  m["config_hash"] = hash_;
  m["format_version"] = 1;
  write_file(dir / "manifest.json", m.dump(1) + "\n");
}

void Pipeline::generate() {
  const auto dir = stage_dir("dataset");
  if (cached(dir)) {
    log("dataset: cached");
    return;
  }
  fs::remove_all(dir);
  std::vector<data::TimeSeriesSample> samples;
  std::vector<std::string> labels;
  if (config_.dataset.source == "synthetic") {
    auto sc = config_.dataset.synthetic;
    sc.seed = derive_seed(config_.seed, {kDataSeed});
    samples = data::generate(sc);
    if (config_.dataset.snr_db) samples = data::add_noise(std::move(samples), *config_.dataset.snr_db, derive_seed(config_.seed, {kNoiseSeed}));
  } else {
    auto loaded = data::load_csv(config_.dataset.csv_path, {config_.dataset.csv_channels, config_.dataset.csv_length,
                                                             config_.dataset.csv_label_column, {}});
    samples = std::move(loaded.samples);
    labels = std::move(loaded.labels);
  }
  const auto split = data::split_dataset(std::move(samples), derive_seed(config_.seed, {kSplitSeed}),
                                         config_.dataset.train_fraction, config_.dataset.validation_fraction);
  fs::create_directories(dir);
  data::save_samples((dir / "train.bin").string(), split.train, hash_);
  data::save_samples((dir / "validation.bin").string(), split.validation, hash_);
  data::save_samples((dir / "test.bin").string(), split.test, hash_);
  std::map<std::size_t, std::size_t> balance;
  for (const auto* part : {&split.train, &split.validation, &split.test})
    for (const auto& s : *part) ++balance[s.label];
  json extra{{"train", split.train.size()}, {"validation", split.validation.size()}, {"test", split.test.size()},
             {"labels", labels}};
  for (auto [label, n] : balance) extra["class_counts"][std::to_string(label)] = n;
  write_manifest(dir, "dataset", extra.dump());
  log(fmt::format("dataset: {} train / {} validation / {} test", split.train.size(), split.validation.size(), split.test.size()));
}

void Pipeline::train() {
  require(stage_dir("dataset"), "generate");
  const auto dir = stage_dir("model");
  if (cached(dir)) {
    log("model: cached");
    return;
  }
  fs::remove_all(dir);
  fs::create_directories(dir);
  if (config_.model.source == "external") {
    write_manifest(dir, "model", json{{"source", "external"}, {"command", config_.model.command}}.dump());
    log("model: external scorer, nothing to train");
    return;
  }
  auto load = [&](const char* name) {
    auto f = data::load_samples((stage_dir("dataset") / name).string());
    check_hash(json::parse(f.header_json).value("config_hash", ""), stage_dir("dataset") / name);
    return std::move(f.samples);
  };
  data::Split split{load("train.bin"), load("validation.bin"), load("test.bin")};
  auto tc = config_.model.train;
  tc.seed = derive_seed(config_.seed, {kTrainSeed});
  auto trained = model::train(split, tc);
  auto report = json::parse(model::training_report_json(trained));
  report["config_hash"] = hash_;
  autodiff::save_checkpoint(trained.graph, (dir / "model.ckpt").string(), report.dump());
  write_file(dir / "training_report.json", report.dump(1) + "\n");
  write_manifest(dir, "model", json{{"source", "train"}, {"test_accuracy", trained.test_accuracy},
                                    {"validation_accuracy", trained.validation_accuracy}}.dump());
  log(fmt::format("model: test accuracy {:.4f} (best epoch {})", trained.test_accuracy, trained.best_epoch));
  model_ = std::make_unique<model::TrainedModel>(std::move(trained));
  scorer_.reset();
}

const scorer::Scorer& Pipeline::scorer() {
  if (scorer_) return *scorer_;
  require(stage_dir("model"), "train");
  if (config_.model.source == "external") {
    scorer_ = std::make_unique<scorer::ProcessScorer>(scorer::split_command(config_.model.command));
    const auto samples = evaluation_samples();
    std::size_t classes = 0;
    const auto manifest = read_json(stage_dir("dataset") / "manifest.json");
    for (const auto& [label, n] : manifest.at("class_counts").items()) {
      classes = std::max<std::size_t>(classes, std::stoull(label) + 1);
    }
    if (!samples.empty()) {
      scorer::check_compatible(scorer_->capabilities(), classes, samples.front().channels(), samples.front().length());
    }
    return *scorer_;
  }
  if (!model_) {
    const auto path = stage_dir("model") / "model.ckpt";
    if (!fs::exists(path)) throw ArtifactError("missing model checkpoint " + path.string());
    const auto meta = read_json(path).at("metadata");
    check_hash(meta.value("config_hash", ""), path);
    model_ = std::make_unique<model::TrainedModel>(model::load_model(path.string()));
  }
  scorer_ = std::make_unique<scorer::ModelScorer>(model_->graph, model_->expects_t);
  return *scorer_;
}

std::vector<data::TimeSeriesSample> Pipeline::evaluation_samples() {
  require(stage_dir("dataset"), "generate");
  const auto path = stage_dir("dataset") / "test.bin";
  auto file = data::load_samples(path.string());
  check_hash(json::parse(file.header_json).value("config_hash", ""), path);
  auto samples = std::move(file.samples);
  if (config_.max_samples && samples.size() > config_.max_samples) samples.resize(config_.max_samples);
  return samples;
}

fs::path Pipeline::relevance_path(attribution::Method method, std::size_t repetition) const {
  const bool per_rep = attribution::is_stochastic(method, config_.attribution);
  return stage_dir("relevance") / attribution::to_string(method) / fmt::format("rep{}.bin", per_rep ? repetition : 0);
}

void Pipeline::attribute() {
  const auto samples = evaluation_samples();
  const auto& sc = scorer();
  std::vector<std::size_t> classes(samples.size());
  {
    std::vector<Tensor> xs;
    for (const auto& s : samples) xs.push_back(s.values);
    const auto probs = sc.score_batch(stack(xs));
    const std::size_t C = probs.dim(1);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double* row = probs.data() + i * C;
      classes[i] = static_cast<std::size_t>(std::max_element(row, row + C) - row);
    }
  }
  for (auto method : config_.methods) {
    const auto name = attribution::to_string(method);
    const auto dir = stage_dir("relevance") / name;
    if (cached(dir)) {
      log("relevance/" + name + ": cached");
      continue;
    }
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::size_t reps = attribution::is_stochastic(method, config_.attribution) ? config_.repetitions : 1;
    for (std::size_t r = 0; r < reps; ++r) {
      auto params = config_.attribution;
      params.seed = derive_seed(config_.seed, {kAttributionSeed, r});
      std::vector<attribution::RelevanceMap> maps(samples.size());
      parallel_for(samples.size(), jobs(), [&](std::size_t i) {
        maps[i] = attribution::attribute(method, sc, samples[i], classes[i], params);
      });
      attribution::save_relevance(relevance_path(method, r).string(), maps, method, params, hash_);
    }
    write_manifest(dir, "relevance", json{{"method", name}, {"files", reps}, {"samples", samples.size()}}.dump());
    log(fmt::format("relevance/{}: {} maps x {} file(s)", name, samples.size(), reps));
  }
}

std::vector<attribution::RelevanceMap> Pipeline::load_maps(attribution::Method method, std::size_t repetition) const {
  require(stage_dir("relevance") / attribution::to_string(method), "attribute");
  const auto path = relevance_path(method, repetition);
  if (!fs::exists(path)) throw ArtifactError("missing relevance file " + path.string());
  auto file = attribution::load_relevance(path.string());
  check_hash(json::parse(file.header_json).value("config_hash", ""), path);
  return std::move(file.maps);
}

void Pipeline::corrupt() {
  // fail on missing inputs before any scoring work
  for (auto method : config_.methods) require(stage_dir("relevance") / attribution::to_string(method), "attribute");
  const auto samples = evaluation_samples();
  const auto& sc = scorer();
  for (auto method : config_.methods) {
    const auto name = attribution::to_string(method);
    const auto dir = stage_dir("drops") / name;
    if (cached(dir)) {
      log("drops/" + name + ": cached");
      continue;
    }
    fs::remove_all(dir);
    json diagnostics = json::array();
    for (std::size_t r = 0; r < config_.repetitions; ++r) {
      const auto maps = load_maps(method, r);
      corruption::CorruptionPlan plan{config_.k_grid, derive_seed(config_.seed, {kCorruptionSeed, r})};
      corruption::CorruptionOptions opts;
      opts.restrict_correct = config_.restrict_correct;
      opts.jobs = jobs();
      const auto result = corruption::run_corruption(sc, samples, maps, name, plan, opts);
      fs::create_directories(dir);
      corruption::save_records_csv((dir / fmt::format("rep{}.csv", r)).string(), result.records);
      diagnostics.push_back({{"repetition", r},
                             {"low_confidence", result.diagnostics.low_confidence},
                             {"misclassified", result.diagnostics.misclassified},
                             {"degenerate", result.diagnostics.degenerate}});
    }
    write_manifest(dir, "drops", json{{"method", name}, {"repetitions", config_.repetitions}, {"diagnostics", diagnostics}}.dump());
    log(fmt::format("drops/{}: {} repetition(s)", name, config_.repetitions));
  }
}

std::vector<corruption::ScoreDropRecord> Pipeline::load_drops(attribution::Method method, std::size_t repetition) const {
  const auto dir = stage_dir("drops") / attribution::to_string(method);
  require(dir, "corrupt");
  const auto path = dir / fmt::format("rep{}.csv", repetition);
  if (!fs::exists(path)) throw ArtifactError("missing score-drop file " + path.string());
  return corruption::load_records_csv(path.string());
}

Evaluation Pipeline::compute_evaluation() {
  for (auto method : config_.methods) require(stage_dir("drops") / attribution::to_string(method), "corrupt");
  const auto samples = evaluation_samples();
  if (samples.empty()) throw ArtifactError("the evaluation split is empty");
  const std::size_t positions = samples.front().values.size();
  const auto& grid = config_.k_grid;

  Evaluation ev;
  ev.k_grid = grid;
  std::vector<std::string> names;
  std::vector<std::vector<metrics::MetricValues>> values(config_.methods.size());
  for (auto method : config_.methods) {
    names.push_back(attribution::to_string(method));
    ev.methods.push_back({names.back(), {}, {}, {}, {}});
  }
  for (std::size_t r = 0; r < config_.repetitions; ++r) {
    std::vector<metrics::MethodCurves> curves;
    std::vector<metrics::CoarseMetrics> coarse;
    for (std::size_t i = 0; i < config_.methods.size(); ++i) {
      const auto records = load_drops(config_.methods[i], r);
      auto& me = ev.methods[i];
      me.top_curves.push_back(corruption::curve_from_records(records, corruption::Scheme::top, grid, positions));
      me.bot_curves.push_back(corruption::curve_from_records(records, corruption::Scheme::bot, grid, positions));
      coarse.push_back(metrics::coarse_metrics(me.top_curves.back(), me.bot_curves.back()));
      metrics::MethodCurves mc{names[i], {}, {}};
      for (double k : grid) {
        const auto drops = corruption::drops_at(records, corruption::Scheme::top, k);
        if (drops.size() < 4) {
          throw ParameterError(fmt::format("{} repetition {}: only {} evaluated samples at k={}, need at least 4",
                                           names[i], r, drops.size(), k));
        }
        mc.skew.push_back(stats::skewness(drops).value);
        mc.kurt.push_back(stats::excess_kurtosis(drops).value);
      }
      me.skew.push_back(mc.skew);
      me.ekurt.push_back(mc.kurt);
      curves.push_back(std::move(mc));
    }
    const auto fine = metrics::fine_metrics(grid, curves);
    for (std::size_t i = 0; i < config_.methods.size(); ++i) {
      values[i].push_back({coarse[i].auc_top, coarse[i].f1, fine.metrics[i].auc_skew_bar, fine.metrics[i].auc_kurt});
    }
  }
  ev.table = metrics::build_table(names, values);
  ev.table.config_hash = hash_;
  return ev;
}

Evaluation Pipeline::evaluate() {
  auto ev = compute_evaluation();
  const auto dir = stage_dir("metrics");
  json extra;
  extra["k_grid"] = ev.k_grid;
  extra["evaluated_samples"] = evaluation_samples().size();
  for (const auto& me : ev.methods) {
    json m;
    m["skew"] = me.skew;
    m["ekurt"] = me.ekurt;
    m["diagnostics"] = read_json(stage_dir("drops") / me.method / "manifest.json").at("diagnostics");
    extra["distributions"][me.method] = std::move(m);
  }
  write_file(dir / "metrics.json", metrics::table_json(ev.table, extra.dump()));
  write_file(dir / "metrics.csv", metrics::table_csv(ev.table));
  write_file(dir / "metrics.md", metrics::table_markdown(ev.table));
  write_manifest(dir, "metrics", json{{"methods", ev.table.rows.size()}, {"repetitions", ev.table.repetitions}}.dump());
  log("metrics: " + (dir / "metrics.json").string());
  return ev;
}

void Pipeline::report() {
  require(stage_dir("metrics"), "evaluate");
  const auto ev = compute_evaluation();
  const auto dir = stage_dir("figures");
  fs::remove_all(dir);
  const auto& grid = ev.k_grid;
  fs::create_directories(dir / "densities");

  for (std::size_t i = 0; i < config_.methods.size(); ++i) {
    const auto records = load_drops(config_.methods[i], 0);
    std::vector<stats::DropDistribution> rows;
    for (double k : grid) rows.push_back(stats::describe(k, corruption::drops_at(records, corruption::Scheme::top, k)));
    report::RidgePlotSpec spec;
    spec.title = ev.methods[i].method + " (repetition 0)";
    write_file(dir / "ridgelines" / (ev.methods[i].method + ".svg"), with_hash(report::render_ridgeline(rows, spec), hash_));

    json shapes;
    for (const auto& row : rows) {
      shapes.push_back({{"k", row.k}, {"skew", row.skew.value}, {"ekurt", row.ekurt.value}, {"shape", stats::to_string(row.shape)}});
      stats::save_density_csv((dir / "densities" / fmt::format("{}_k{}.csv", ev.methods[i].method, k_label(row.k))).string(), row.density);
    }
    write_file(dir / "densities" / (ev.methods[i].method + "_shapes.json"), shapes.dump(1) + "\n");
  }

  // rescaled skew/kurt per repetition, averaged over repetitions
  std::vector<std::string> labels;
  std::vector<std::vector<double>> skew_mean(ev.methods.size(), std::vector<double>(grid.size(), 0.0));
  std::vector<std::vector<double>> kurt_mean = skew_mean;
  for (std::size_t r = 0; r < config_.repetitions; ++r) {
    std::vector<metrics::MethodCurves> curves;
    for (const auto& me : ev.methods) curves.push_back({me.method, me.skew[r], me.ekurt[r]});
    const auto fine = metrics::fine_metrics(grid, curves);
    for (std::size_t i = 0; i < ev.methods.size(); ++i)
      for (std::size_t j = 0; j < grid.size(); ++j) {
        skew_mean[i][j] += fine.rescaled_skew[i][j] / static_cast<double>(config_.repetitions);
        kurt_mean[i][j] += fine.rescaled_kurt[i][j] / static_cast<double>(config_.repetitions);
      }
  }
  for (const auto& me : ev.methods) labels.push_back(me.method);
  report::CurvePlotSpec fixed{"", "k", "", 480, 320, true, 0.0, 1.0};
  fixed.title = "scaled skewness";
  fixed.y_label = "skew (rescaled)";
  write_file(dir / "fine_skew.svg", with_hash(report::render_curves(report::grid_series(grid, labels, skew_mean), fixed), hash_));
  fixed.title = "scaled excess kurtosis";
  fixed.y_label = "excess kurtosis (rescaled)";
  write_file(dir / "fine_kurt.svg", with_hash(report::render_curves(report::grid_series(grid, labels, kurt_mean), fixed), hash_));

  for (auto scheme : {corruption::Scheme::top, corruption::Scheme::bot}) {
    std::vector<report::Series> series;
    for (const auto& me : ev.methods) {
      const auto& per_rep = scheme == corruption::Scheme::top ? me.top_curves : me.bot_curves;
      report::Series s{me.method, {}, {}};
      for (std::size_t j = 0; j < per_rep.front().size(); ++j) {
        double x = 0.0, y = 0.0;
        for (const auto& c : per_rep) {
          x += c[j].n_ratio;
          y += c[j].mean_drop;
        }
        s.x.push_back(x / static_cast<double>(per_rep.size()));
        s.y.push_back(y / static_cast<double>(per_rep.size()));
      }
      series.push_back(std::move(s));
    }
    const auto tag = corruption::to_string(scheme);
    report::CurvePlotSpec spec{"mean score drop, " + tag + " corruption", "corrupted fraction of all positions", "mean normalized score drop"};
    write_file(dir / ("coarse_" + tag + ".svg"), with_hash(report::render_curves(series, spec), hash_));
  }

  if (config_.sample_report_count > 0) {
    auto method = config_.methods.front();
    for (auto m : config_.methods)
      if (attribution::to_string(m) == config_.sample_report_method) method = m;
    auto samples = evaluation_samples();
    const auto maps = load_maps(method, 0);
    const auto records = load_drops(method, 0);
    std::set<std::uint64_t> evaluated;
    for (const auto& rec : records) evaluated.insert(rec.sample_id);
    std::vector<data::TimeSeriesSample> chosen;
    for (auto& s : samples) {
      if (chosen.size() == config_.sample_report_count) break;
      if (evaluated.count(s.id)) chosen.push_back(std::move(s));
    }
    write_file(dir / "samples.svg",
               with_hash(report::per_sample_report(chosen, maps, records, config_.sample_report_k), hash_));
  }
  write_file(dir / "metrics.md", read_text(stage_dir("metrics") / "metrics.md"));
  write_manifest(dir, "figures", json{{"methods", ev.methods.size()}}.dump());
  log("figures: " + dir.string());
}

Evaluation Pipeline::run_all() {
  generate();
  train();
  attribute();
  corrupt();
  auto ev = evaluate();
  report();
  return ev;
}

}  // namespace attreval::pipeline
