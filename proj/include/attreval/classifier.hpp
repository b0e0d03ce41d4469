#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attreval/autodiff.hpp"
#include "attreval/dataset.hpp"

namespace attreval::model {

enum class Calibration { off, class0, class1 };
enum class Optimizer { adam, sgd_momentum };

std::string to_string(Calibration c);
Calibration calibration_from_string(const std::string& name);
std::string to_string(Optimizer o);
Optimizer optimizer_from_string(const std::string& name);

// Conv stack -> global average pool -> dense head -> class logits.
struct ArchitectureConfig {
  std::size_t conv_layers = 3;
  std::size_t conv_units = 16;
  std::size_t kernel_size = 11;
  std::size_t stride = 1;
  double dropout = 0.2;
  std::size_t dense_units = 32;
};

std::vector<autodiff::LayerSpec> build_layers(const ArchitectureConfig& arch, std::size_t class_count);

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 64;
  double learning_rate = 0.003;
  double weight_decay = 0.0;
  double momentum = 0.9;  // sgd_momentum only
  Optimizer optimizer = Optimizer::adam;
  double augmentation_fraction = 0.5;
  Calibration calibration = Calibration::off;
  std::size_t patience = 5;  // early stopping on validation accuracy; 0 disables
  std::uint64_t seed = 0;
  ArchitectureConfig architecture;

  void validate() const;
};

struct EpochReport {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
};

struct TrainedModel {
  autodiff::Graph graph;
  std::size_t class_count = 0;
  std::size_t expects_m = 0;
  std::size_t expects_t = 0;
  std::vector<EpochReport> training_report;
  std::size_t best_epoch = 0;
  double validation_accuracy = 0.0;
  double test_accuracy = 0.0;
};

// Stacked samples plus the per-sample side information the losses need.
struct Batch {
  Tensor inputs;  // [B, M, T]
  std::vector<std::size_t> labels;
  std::vector<double> f_norm;  // empty unless calibrating
};

Batch make_batch(std::span<const data::TimeSeriesSample> samples, bool with_f_norm = false);

// Default corruption levels drawn during augmentation: 0.05, 0.15, ..., 0.95.
std::vector<double> default_augmentation_levels();

// Appends round(fraction * B) corrupted copies of distinct, randomly chosen
// samples: a fraction k (drawn uniformly from `levels`) of each copy's
// positions is replaced by N(0, 1) draws. Labels are preserved.
Batch augment_with_corruption(Batch batch, double fraction, Rng& rng,
                              std::span<const double> levels = {});

// Target probability of the anchor class under calibration.
double calibration_target(double f_norm, Calibration anchor);

// Cross-entropy (batch mean) plus MSE between the anchor-class probability
// and its calibration target. `probabilities` is [B, C].
double calibration_loss(const Tensor& probabilities, std::span<const std::size_t> labels,
                        std::span<const double> f_norm, Calibration anchor);

struct LossAndGradient {
  double loss = 0.0;
  Tensor logit_gradient;  // [B, C]
};

LossAndGradient loss_and_gradient(const Tensor& logits, std::span<const std::size_t> labels,
                                  std::span<const double> f_norm, Calibration anchor);

TrainedModel train(const data::Split& split, const TrainConfig& config);

// [M, T] -> [C]; [B, M, T] -> [B, C]. Large batches are chunked internally.
Tensor predict_probabilities(const autodiff::Graph& graph, const Tensor& x);
double accuracy(const autodiff::Graph& graph, std::span<const data::TimeSeriesSample> samples);

std::string training_report_json(const TrainedModel& model);
void save_model(const TrainedModel& model, const std::string& path);
TrainedModel load_model(const std::string& path);

}  // namespace attreval::model
