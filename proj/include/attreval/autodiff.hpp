#pragma once

// Reverse-mode differentiation over a fixed layer vocabulary.
//
// Activations flow between layers as channel-major matrices of shape
// [channels, batch * length]; a [M, T] sample enters as M channels of length T.
// A trained Graph is immutable: forward() returns a ForwardPass that owns all
// cached activations, so concurrent callers never share backward state.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "attreval/rng.hpp"
#include "attreval/tensor.hpp"

namespace attreval::autodiff {

enum class LayerKind { conv1d, dense, relu, global_avg_pool, softmax };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t units = 0;
  std::size_t kernel_size = 1;
  std::size_t stride = 1;
  double dropout_rate = 0.0;
  bool use_bias = true;

  static LayerSpec conv1d(std::size_t units, std::size_t kernel_size, std::size_t stride = 1,
                          double dropout = 0.0);
  static LayerSpec dense(std::size_t units, double dropout = 0.0, bool bias = true);
  static LayerSpec relu();
  static LayerSpec global_avg_pool();
  static LayerSpec softmax();

  bool operator==(const LayerSpec&) const = default;
};

// Input channels M and series length T. length == 0 accepts any length (only
// valid when no dense layer consumes an unpooled sequence).
struct InputSpec {
  std::size_t channels = 1;
  std::size_t length = 0;
  bool operator==(const InputSpec&) const = default;
};

// Weight and bias of one layer; both empty for parameter-free layers.
struct Parameters {
  Tensor weight;
  Tensor bias;
};

enum class ScoreTarget { logit, probability };

std::string to_string(ScoreTarget target);
ScoreTarget score_target_from_string(const std::string& name);

using Matrix = Eigen::MatrixXd;

struct LayerCache {
  Matrix input;    // conv: padded input (stride 1) or im2col matrix; dense: flattened input; relu: input
  Matrix mask;     // dropout mask (already scaled by 1/(1-p)), empty if unused
  std::size_t in_channels = 0;
  std::size_t in_length = 0;
};

class Graph;

// Result of a forward call. Holds the logits ([C] for a single sample,
// [B, C] for a batch) and, when requested, everything backward() needs.
class ForwardPass {
 public:
  ForwardPass() = default;

  const Tensor& logits() const noexcept { return logits_; }
  bool has_cache() const noexcept { return cached_; }
  std::size_t batch() const noexcept { return batch_; }
  bool batched() const noexcept { return batched_input_; }

 private:
  friend class Graph;
  Tensor logits_;
  std::vector<LayerCache> caches_;
  std::vector<std::size_t> input_shape_;
  std::size_t batch_ = 0;
  bool batched_input_ = false;
  bool cached_ = false;
  const Graph* owner_ = nullptr;
};

struct Gradients {
  std::vector<Parameters> parameters;  // one entry per layer
  Tensor input;                        // same shape as the forward input
};

struct ForwardOptions {
  bool training = false;     // enables dropout
  bool keep_cache = false;   // required for backward
  Rng* dropout_rng = nullptr;
};

class Graph {
 public:
  Graph() = default;
  Graph(InputSpec input, std::vector<LayerSpec> layers);

  // He-uniform weights, zero biases.
  void initialize(std::uint64_t seed);

  ForwardPass forward(const Tensor& x, const ForwardOptions& options = {}) const;

  // `loss_gradient` is d(loss)/d(logits) shaped like pass.logits().
  Gradients backward(const ForwardPass& pass, const Tensor& loss_gradient,
                     bool need_input_gradient = true) const;

  // d(score of class_index)/dx, for a single sample or for every sample of a batch.
  Tensor input_gradient(const Tensor& x, std::size_t class_index, ScoreTarget target) const;

  Tensor probabilities(const Tensor& x) const;

  const InputSpec& input_spec() const noexcept { return input_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::vector<Parameters>& parameters() noexcept { return params_; }
  const std::vector<Parameters>& parameters() const noexcept { return params_; }
  std::size_t class_count() const noexcept { return output_units_; }
  std::size_t parameter_count() const noexcept;

  bool operator==(const Graph& other) const;

 private:
  void validate_and_allocate();
  void check_input(const Tensor& x, std::size_t& batch, std::size_t& length) const;

  InputSpec input_;
  std::vector<LayerSpec> layers_;
  std::vector<Parameters> params_;
  std::size_t output_units_ = 0;
};

// Row-wise softmax of logits ([C] or [B, C]).
Tensor softmax(const Tensor& logits);

// Checkpoint container (JSON, version field mandatory).
inline constexpr int kCheckpointVersion = 1;

std::string checkpoint_to_json(const Graph& graph, const std::string& extra_json = "{}");
Graph checkpoint_from_json(const std::string& text);
void save_checkpoint(const Graph& graph, const std::string& path, const std::string& extra_json = "{}");
Graph load_checkpoint(const std::string& path);

}  // namespace attreval::autodiff
