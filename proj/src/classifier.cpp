#include "attreval/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "attreval/errors.hpp"

namespace attreval::model {

using autodiff::Graph;
using autodiff::LayerSpec;

std::string to_string(Calibration c) {
  switch (c) {
    case Calibration::off: return "off";
    case Calibration::class0: return "class0";
    case Calibration::class1: return "class1";
  }
  return "off";
}

Calibration calibration_from_string(const std::string& name) {
  if (name == "off" || name.empty()) return Calibration::off;
  if (name == "class0") return Calibration::class0;
  if (name == "class1") return Calibration::class1;
  throw ConfigError("unknown calibration '" + name + "' (expected off, class0 or class1)");
}

std::string to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd_momentum"; }

Optimizer optimizer_from_string(const std::string& name) {
  if (name == "adam") return Optimizer::adam;
  if (name == "sgd_momentum" || name == "sgd") return Optimizer::sgd_momentum;
  throw ConfigError("unknown optimizer '" + name + "'");
}

std::vector<LayerSpec> build_layers(const ArchitectureConfig& arch, std::size_t class_count) {
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < arch.conv_layers; ++i) {
    layers.push_back(LayerSpec::conv1d(arch.conv_units, arch.kernel_size, arch.stride, arch.dropout));
    layers.push_back(LayerSpec::relu());
  }
  layers.push_back(LayerSpec::global_avg_pool());
  if (arch.dense_units > 0) {
    layers.push_back(LayerSpec::dense(arch.dense_units));
    layers.push_back(LayerSpec::relu());
  }
  layers.push_back(LayerSpec::dense(class_count));
  layers.push_back(LayerSpec::softmax());
  return layers;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (augmentation_fraction < 0.0 || augmentation_fraction > 1.0)
    throw ConfigError("augmentation_fraction must lie in [0, 1]");
  if (batch_size == 0 || epochs == 0) throw ConfigError("batch_size and epochs must be >= 1");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
}

Batch make_batch(std::span<const data::TimeSeriesSample> samples, bool with_f_norm) {
  Batch batch;
  if (samples.empty()) return batch;
  const std::size_t M = samples.front().channels();
  const std::size_t T = samples.front().length();
  batch.inputs = Tensor({samples.size(), M, T});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].values.shape() != samples.front().values.shape())
      throw ConfigError("batch samples differ in shape");
    std::copy(samples[i].values.values().begin(), samples[i].values.values().end(),
              batch.inputs.data() + i * M * T);
    batch.labels.push_back(samples[i].label);
    if (with_f_norm) {
      if (!samples[i].has_frequencies())
        throw ConfigError("calibration requested but sample " + std::to_string(samples[i].id) +
                          " has no f1/f2 (only synthetic data can be calibrated)");
      batch.f_norm.push_back(data::normalized_frequency_sum(*samples[i].f1, *samples[i].f2));
    }
  }
  return batch;
}

std::vector<double> default_augmentation_levels() {
  std::vector<double> levels;
  for (int i = 0; i < 10; ++i) levels.push_back(0.05 + 0.1 * i);
  return levels;
}

Batch augment_with_corruption(Batch batch, double fraction, Rng& rng, std::span<const double> levels) {
  if (fraction < 0.0 || fraction > 1.0) throw ParameterError("augmentation fraction must lie in [0, 1]");
  const std::vector<double> defaults = default_augmentation_levels();
  if (levels.empty()) levels = defaults;
  const std::size_t n = batch.labels.size();
  const auto n_aug = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
  if (n_aug == 0 || n == 0) return batch;

  const std::size_t M = batch.inputs.dim(1);
  const std::size_t T = batch.inputs.dim(2);
  const std::size_t per = M * T;

  std::vector<std::size_t> chosen(n);
  std::iota(chosen.begin(), chosen.end(), 0);
  for (std::size_t i = 0; i < n_aug; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(chosen[i], chosen[pick(rng)]);
  }
  chosen.resize(n_aug);

  Tensor inputs({n + n_aug, M, T});
  std::copy(batch.inputs.values().begin(), batch.inputs.values().end(), inputs.data());
  std::vector<std::size_t> positions(per);
  std::uniform_int_distribution<std::size_t> level_pick(0, levels.size() - 1);
  for (std::size_t a = 0; a < n_aug; ++a) {
    const std::size_t src = chosen[a];
    double* dst = inputs.data() + (n + a) * per;
    std::copy_n(batch.inputs.data() + src * per, per, dst);
    const double k = levels[level_pick(rng)];
    const auto count = std::min(per, static_cast<std::size_t>(std::floor(k * static_cast<double>(per) + 0.5)));
    std::iota(positions.begin(), positions.end(), 0);
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, per - 1);
      std::swap(positions[i], positions[pick(rng)]);
      dst[positions[i]] = standard_normal(rng);
    }
    batch.labels.push_back(batch.labels[src]);
    if (!batch.f_norm.empty()) batch.f_norm.push_back(batch.f_norm[src]);
  }
  batch.inputs = std::move(inputs);
  return batch;
}

double calibration_target(double f_norm, Calibration anchor) {
  return anchor == Calibration::class0 ? 1.0 - f_norm : f_norm;
}

namespace {

std::size_t anchor_class(Calibration anchor) { return anchor == Calibration::class0 ? 0 : 1; }

void check_loss_inputs(const Tensor& t, std::span<const std::size_t> labels, std::span<const double> f_norm,
                       Calibration anchor) {
  if (t.rank() != 2 || t.dim(0) != labels.size()) throw ConfigError("loss expects [B, C] scores and B labels");
  if (anchor != Calibration::off) {
    if (f_norm.size() != labels.size())
      throw ConfigError("calibration requires f_norm per sample (synthetic data with f1, f2)");
    if (t.dim(1) < 2) throw ConfigError("calibration requires at least two classes");
  }
}

}  // namespace

double calibration_loss(const Tensor& probabilities, std::span<const std::size_t> labels,
                        std::span<const double> f_norm, Calibration anchor) {
  check_loss_inputs(probabilities, labels, f_norm, anchor);
  const std::size_t B = labels.size();
  const std::size_t C = probabilities.dim(1);
  double ce = 0.0;
  double mse = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    ce -= std::log(std::max(probabilities[b * C + labels[b]], 1e-300));
    if (anchor != Calibration::off) {
      const double diff = probabilities[b * C + anchor_class(anchor)] - calibration_target(f_norm[b], anchor);
      mse += diff * diff;
    }
  }
  return (ce + mse) / static_cast<double>(B);
}

LossAndGradient loss_and_gradient(const Tensor& logits, std::span<const std::size_t> labels,
                                  std::span<const double> f_norm, Calibration anchor) {
  check_loss_inputs(logits, labels, f_norm, anchor);
  const std::size_t B = labels.size();
  const std::size_t C = logits.dim(1);
  const Tensor probs = autodiff::softmax(logits);
  LossAndGradient out;
  out.loss = calibration_loss(probs, labels, f_norm, anchor);
  out.logit_gradient = Tensor({B, C});
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < C; ++j)
      out.logit_gradient[b * C + j] = (probs[b * C + j] - (j == labels[b] ? 1.0 : 0.0)) * inv_b;
    if (anchor != Calibration::off) {
      const std::size_t a = anchor_class(anchor);
      const double pa = probs[b * C + a];
      const double coeff = 2.0 * (pa - calibration_target(f_norm[b], anchor)) * inv_b;
      for (std::size_t j = 0; j < C; ++j)
        out.logit_gradient[b * C + j] += coeff * pa * ((j == a ? 1.0 : 0.0) - probs[b * C + j]);
    }
  }
  return out;
}

Tensor predict_probabilities(const Graph& graph, const Tensor& x) {
  if (x.rank() != 3) return autodiff::softmax(graph.forward(x).logits());
  constexpr std::size_t kChunk = 128;
  const std::size_t B = x.dim(0);
  const std::size_t per = x.size() / std::max<std::size_t>(B, 1);
  const std::size_t C = graph.class_count();
  Tensor out({B, C});
  for (std::size_t start = 0; start < B; start += kChunk) {
    const std::size_t n = std::min(kChunk, B - start);
    Tensor chunk({n, x.dim(1), x.dim(2)});
    std::copy_n(x.data() + start * per, n * per, chunk.data());
    const Tensor p = autodiff::softmax(graph.forward(chunk).logits());
    std::copy_n(p.data(), n * C, out.data() + start * C);
  }
  return out;
}

double accuracy(const Graph& graph, std::span<const data::TimeSeriesSample> samples) {
  if (samples.empty()) return 0.0;
  const Batch batch = make_batch(samples);
  const Tensor probs = predict_probabilities(graph, batch.inputs);
  const std::size_t C = probs.dim(1);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const double* row = probs.data() + b * C;
    const auto pred = static_cast<std::size_t>(std::max_element(row, row + C) - row);
    correct += pred == batch.labels[b];
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

namespace {

class OptimizerState {
 public:
  OptimizerState(const TrainConfig& config, const Graph& graph) : config_(config) {
    for (const auto& p : graph.parameters()) {
      first_.push_back(std::vector<double>(p.weight.size() + p.bias.size(), 0.0));
      second_.push_back(std::vector<double>(p.weight.size() + p.bias.size(), 0.0));
    }
  }

  void step(Graph& graph, const autodiff::Gradients& grads) {
    ++t_;
    const double b1 = 0.9;
    const double b2 = 0.999;
    const double eps = 1e-8;
    const double lr = config_.learning_rate;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t l = 0; l < graph.parameters().size(); ++l) {
      auto& p = graph.parameters()[l];
      const auto& g = grads.parameters[l];
      std::size_t offset = 0;
      auto update = [&](Tensor& param, const Tensor& grad, bool decay) {
        for (std::size_t i = 0; i < param.size(); ++i) {
          double& m = first_[l][offset + i];
          double& v = second_[l][offset + i];
          const double gi = grad[i];
          if (config_.optimizer == Optimizer::adam) {
            m = b1 * m + (1.0 - b1) * gi;
            v = b2 * v + (1.0 - b2) * gi * gi;
            param[i] -= lr * ((m / c1) / (std::sqrt(v / c2) + eps));
            if (decay) param[i] -= lr * config_.weight_decay * param[i];
          } else {
            m = config_.momentum * m + gi + (decay ? config_.weight_decay * param[i] : 0.0);
            param[i] -= lr * m;
          }
        }
        offset += param.size();
      };
      if (!p.weight.empty()) update(p.weight, g.weight, true);
      if (!p.bias.empty()) update(p.bias, g.bias, false);
    }
  }

 private:
  const TrainConfig& config_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::size_t t_ = 0;
};

}  // namespace

TrainedModel train(const data::Split& split, const TrainConfig& config) {
  config.validate();
  const auto& train_set = split.train;
  if (train_set.empty()) throw ConfigError("empty training set");
  std::size_t class_count = 0;
  std::vector<bool> present;
  for (const auto& s : train_set) {
    class_count = std::max(class_count, s.label + 1);
    present.resize(class_count, false);
    present[s.label] = true;
  }
  if (std::count(present.begin(), present.end(), true) < 2) throw ConfigError("training needs at least two classes");
  const bool calibrate = config.calibration != Calibration::off;
  if (calibrate && class_count != 2) throw ConfigError("calibration is defined for binary tasks only");

  TrainedModel model;
  model.class_count = class_count;
  model.expects_m = train_set.front().channels();
  model.expects_t = train_set.front().length();
  model.graph = Graph(autodiff::InputSpec{model.expects_m, 0}, build_layers(config.architecture, class_count));
  model.graph.initialize(derive_seed(config.seed, {0x1417}));

  OptimizerState optimizer(config, model.graph);
  Rng rng(derive_seed(config.seed, {0x7a1}));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  Graph best = model.graph;
  double best_val = -1.0;
  std::size_t since_best = 0;
  std::vector<data::TimeSeriesSample> chunk;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t loss_batches = 0;
    std::size_t correct = 0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      chunk.clear();
      for (std::size_t i = 0; i < n; ++i) chunk.push_back(train_set[order[start + i]]);
      Batch batch = make_batch(chunk, calibrate);
      batch = augment_with_corruption(std::move(batch), config.augmentation_fraction, rng);

      autodiff::ForwardOptions options;
      options.training = true;
      options.keep_cache = true;
      options.dropout_rng = &rng;
      const autodiff::ForwardPass pass = model.graph.forward(batch.inputs, options);
      const LossAndGradient lg = loss_and_gradient(pass.logits(), batch.labels, batch.f_norm, config.calibration);
      if (!std::isfinite(lg.loss)) {
        throw TrainingError("training diverged: non-finite loss in epoch " + std::to_string(epoch));
      }
      const autodiff::Gradients grads = model.graph.backward(pass, lg.logit_gradient, false);
      optimizer.step(model.graph, grads);

      loss_sum += lg.loss;
      ++loss_batches;
      const std::size_t C = class_count;
      for (std::size_t b = 0; b < batch.labels.size(); ++b) {
        const double* row = pass.logits().data() + b * C;
        correct += static_cast<std::size_t>(std::max_element(row, row + C) - row) == batch.labels[b];
      }
      seen += batch.labels.size();
    }
    for (const auto& p : model.graph.parameters()) {
      if (!p.weight.all_finite() || !p.bias.all_finite())
        throw TrainingError("training diverged: non-finite parameters after epoch " + std::to_string(epoch));
    }

    EpochReport report;
    report.epoch = epoch;
    report.loss = loss_sum / static_cast<double>(std::max<std::size_t>(loss_batches, 1));
    report.train_accuracy = static_cast<double>(correct) / static_cast<double>(std::max<std::size_t>(seen, 1));
    const auto& monitor = split.validation.empty() ? split.train : split.validation;
    report.validation_accuracy = accuracy(model.graph, monitor);
    model.training_report.push_back(report);

    if (report.validation_accuracy > best_val) {
      best_val = report.validation_accuracy;
      best = model.graph;
      model.best_epoch = epoch;
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      break;
    }
  }
  model.graph = std::move(best);
  model.validation_accuracy = best_val;
  model.test_accuracy = split.test.empty() ? 0.0 : accuracy(model.graph, split.test);
  return model;
}

std::string training_report_json(const TrainedModel& model) {
  nlohmann::json root;
  root["version"] = 1;
  root["class_count"] = model.class_count;
  root["expects_m"] = model.expects_m;
  root["expects_t"] = model.expects_t;
  root["best_epoch"] = model.best_epoch;
  root["validation_accuracy"] = model.validation_accuracy;
  root["test_accuracy"] = model.test_accuracy;
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : model.training_report)
    epochs.push_back({{"epoch", e.epoch},
                      {"loss", e.loss},
                      {"train_accuracy", e.train_accuracy},
                      {"validation_accuracy", e.validation_accuracy}});
  root["epochs"] = std::move(epochs);
  return root.dump(1);
}

void save_model(const TrainedModel& model, const std::string& path) {
  autodiff::save_checkpoint(model.graph, path, training_report_json(model));
}

TrainedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot read model checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  TrainedModel model;
  model.graph = autodiff::checkpoint_from_json(ss.str());
  const auto meta = nlohmann::json::parse(ss.str()).at("metadata");
  model.class_count = model.graph.class_count();
  model.expects_m = meta.value("expects_m", model.graph.input_spec().channels);
  model.expects_t = meta.value("expects_t", std::size_t{0});
  model.best_epoch = meta.value("best_epoch", std::size_t{0});
  model.validation_accuracy = meta.value("validation_accuracy", 0.0);
  model.test_accuracy = meta.value("test_accuracy", 0.0);
  if (meta.contains("epochs")) {
    for (const auto& e : meta.at("epochs"))
      model.training_report.push_back({e.at("epoch").get<std::size_t>(), e.at("loss").get<double>(),
                                       e.at("train_accuracy").get<double>(),
                                       e.at("validation_accuracy").get<double>()});
  }
  return model;
}

}  // namespace attreval::model
