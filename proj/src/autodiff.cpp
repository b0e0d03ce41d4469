#include "attreval/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "attreval/errors.hpp"

namespace attreval::autodiff {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeightMap = Eigen::Map<const RowMatrix>;
using WeightMap = Eigen::Map<RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t conv_output_length(std::size_t length, std::size_t stride) {
  return length == 0 ? 0 : (length - 1) / stride + 1;
}

// im2col for "same" zero padding. Row index is k * in_channels + c so each
// copied run is one contiguous input column.
Matrix im2col(const Matrix& input, std::size_t in_channels, std::size_t length, std::size_t batch,
              std::size_t kernel, std::size_t stride) {
  const std::size_t out_length = conv_output_length(length, stride);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
  Matrix col = Matrix::Zero(static_cast<Eigen::Index>(kernel * in_channels),
                            static_cast<Eigen::Index>(batch * out_length));
  const double* src = input.data();
  double* dst = col.data();
  const std::size_t rows = kernel * in_channels;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < out_length; ++t) {
      double* column = dst + (b * out_length + t) * rows;
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(t * stride + k) - pad;
        if (p < 0 || p >= static_cast<std::ptrdiff_t>(length)) continue;
        std::memcpy(column + k * in_channels, src + (b * length + static_cast<std::size_t>(p)) * in_channels,
                    in_channels * sizeof(double));
      }
    }
  }
  return col;
}

Matrix col2im(const Matrix& col, std::size_t in_channels, std::size_t length, std::size_t batch,
              std::size_t kernel, std::size_t stride) {
  const std::size_t out_length = conv_output_length(length, stride);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(in_channels), static_cast<Eigen::Index>(batch * length));
  const double* src = col.data();
  double* dst = out.data();
  const std::size_t rows = kernel * in_channels;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < out_length; ++t) {
      const double* column = src + (b * out_length + t) * rows;
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(t * stride + k) - pad;
        if (p < 0 || p >= static_cast<std::ptrdiff_t>(length)) continue;
        double* target = dst + (b * length + static_cast<std::size_t>(p)) * in_channels;
        const double* from = column + k * in_channels;
        for (std::size_t c = 0; c < in_channels; ++c) target[c] += from[c];
      }
    }
  }
  return out;
}

Matrix flatten_sequence(const Matrix& input, std::size_t channels, std::size_t length, std::size_t batch) {
  if (length == 1) return input;
  Matrix flat(static_cast<Eigen::Index>(channels * length), static_cast<Eigen::Index>(batch));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < length; ++t)
      for (std::size_t c = 0; c < channels; ++c)
        flat(static_cast<Eigen::Index>(c * length + t), static_cast<Eigen::Index>(b)) =
            input(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(b * length + t));
  return flat;
}

Matrix unflatten_sequence(const Matrix& flat, std::size_t channels, std::size_t length, std::size_t batch) {
  if (length == 1) return flat;
  Matrix out(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(batch * length));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < length; ++t)
      for (std::size_t c = 0; c < channels; ++c)
        out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(b * length + t)) =
            flat(static_cast<Eigen::Index>(c * length + t), static_cast<Eigen::Index>(b));
  return out;
}

// Stride-1 "same" convolution without materialising im2col: samples are laid
// out with kernel/2 zero columns on both sides, so the receptive field of every
// output is one contiguous run of kernel * in_channels values and the im2col
// matrix is an overlapping strided view of the padded buffer.
using StridedView = Eigen::Map<const Matrix, 0, Eigen::OuterStride<>>;

Matrix pad_sequences(const Matrix& input, std::size_t channels, std::size_t length, std::size_t batch,
                     std::size_t pad) {
  const std::size_t padded = length + 2 * pad;
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(batch * padded));
  for (std::size_t b = 0; b < batch; ++b)
    out.middleCols(static_cast<Eigen::Index>(b * padded + pad), static_cast<Eigen::Index>(length)) =
        input.middleCols(static_cast<Eigen::Index>(b * length), static_cast<Eigen::Index>(length));
  return out;
}

StridedView window_view(const Matrix& padded, std::size_t channels, std::size_t kernel) {
  const Eigen::Index cols = padded.cols() - static_cast<Eigen::Index>(kernel - 1);
  return StridedView(padded.data(), static_cast<Eigen::Index>(kernel * channels), cols,
                     Eigen::OuterStride<>(static_cast<Eigen::Index>(channels)));
}

// Valid outputs sit at columns b * padded_length + t of the full product.
Matrix gather_valid(const Matrix& full, std::size_t length, std::size_t batch, std::size_t padded_length) {
  Matrix out(full.rows(), static_cast<Eigen::Index>(batch * length));
  for (std::size_t b = 0; b < batch; ++b)
    out.middleCols(static_cast<Eigen::Index>(b * length), static_cast<Eigen::Index>(length)) =
        full.middleCols(static_cast<Eigen::Index>(b * padded_length), static_cast<Eigen::Index>(length));
  return out;
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  const double keep = 1.0 - rate;
  const double scale = 1.0 / keep;
  const auto threshold = static_cast<std::uint64_t>(keep * 65536.0);
  double* m = mask.data();
  std::uint64_t word = 0;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (i % 4 == 0) word = rng();
    m[i] = (word & 0xffffU) < threshold ? scale : 0.0;
    word >>= 16;
  }
  return mask;
}

void require_finite(const Matrix& m, std::size_t layer, LayerKind kind) {
  if (!m.allFinite()) {
    throw NumericError("non-finite activation at layer " + std::to_string(layer) + " (" + to_string(kind) + ")");
  }
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::softmax: return "softmax";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (LayerKind k : {LayerKind::conv1d, LayerKind::dense, LayerKind::relu, LayerKind::global_avg_pool,
                      LayerKind::softmax}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown layer kind '" + name + "'");
}

std::string to_string(ScoreTarget target) {
  return target == ScoreTarget::logit ? "logit" : "probability";
}

ScoreTarget score_target_from_string(const std::string& name) {
  if (name == "logit") return ScoreTarget::logit;
  if (name == "probability") return ScoreTarget::probability;
  throw ConfigError("unknown score target '" + name + "'");
}

LayerSpec LayerSpec::conv1d(std::size_t units, std::size_t kernel_size, std::size_t stride, double dropout) {
  return LayerSpec{LayerKind::conv1d, units, kernel_size, stride, dropout, true};
}
LayerSpec LayerSpec::dense(std::size_t units, double dropout, bool bias) {
  return LayerSpec{LayerKind::dense, units, 1, 1, dropout, bias};
}
LayerSpec LayerSpec::relu() { return LayerSpec{LayerKind::relu, 0, 1, 1, 0.0, false}; }
LayerSpec LayerSpec::global_avg_pool() { return LayerSpec{LayerKind::global_avg_pool, 0, 1, 1, 0.0, false}; }
LayerSpec LayerSpec::softmax() { return LayerSpec{LayerKind::softmax, 0, 1, 1, 0.0, false}; }

Graph::Graph(InputSpec input, std::vector<LayerSpec> layers) : input_(input), layers_(std::move(layers)) {
  validate_and_allocate();
}

void Graph::validate_and_allocate() {
  if (input_.channels == 0) throw ConfigError("graph input needs at least one channel");
  if (layers_.empty()) throw ConfigError("graph needs at least one layer");
  std::size_t channels = input_.channels;
  std::size_t length = input_.length;
  params_.assign(layers_.size(), Parameters{});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& spec = layers_[i];
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(spec.kind) + ")";
    if (spec.dropout_rate < 0.0 || spec.dropout_rate >= 1.0) {
      throw ConfigError(where + ": dropout_rate must lie in [0, 1)");
    }
    switch (spec.kind) {
      case LayerKind::conv1d: {
        if (spec.kernel_size == 0 || spec.kernel_size % 2 == 0)
          throw ConfigError(where + ": kernel_size must be odd and >= 1");
        if (spec.stride == 0 || spec.units == 0) throw ConfigError(where + ": units and stride must be >= 1");
        params_[i].weight = Tensor({spec.units, spec.kernel_size, channels});
        if (spec.use_bias) params_[i].bias = Tensor({spec.units});
        channels = spec.units;
        length = conv_output_length(length, spec.stride);
        break;
      }
      case LayerKind::dense: {
        if (spec.units == 0) throw ConfigError(where + ": units must be >= 1");
        if (length == 0) throw ConfigError(where + ": dense layer on a variable-length sequence; pool first");
        params_[i].weight = Tensor({spec.units, channels * length});
        if (spec.use_bias) params_[i].bias = Tensor({spec.units});
        channels = spec.units;
        length = 1;
        break;
      }
      case LayerKind::relu:
        if (spec.dropout_rate > 0.0) throw ConfigError(where + ": dropout only on conv1d/dense");
        break;
      case LayerKind::global_avg_pool:
        if (spec.dropout_rate > 0.0) throw ConfigError(where + ": dropout only on conv1d/dense");
        length = 1;
        break;
      case LayerKind::softmax:
        if (i + 1 != layers_.size()) throw ConfigError(where + ": softmax must be the last layer");
        break;
    }
  }
  if (length != 1) throw ConfigError("graph output must be a vector (pool or dense before the head)");
  output_units_ = channels;
}

void Graph::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Parameters& p = params_[i];
    if (p.weight.empty()) continue;
    const std::size_t fan_in = p.weight.size() / p.weight.dim(0);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& w : p.weight.values()) w = (2.0 * uniform01(rng) - 1.0) * bound;
    for (double& b : p.bias.values()) b = 0.0;
  }
}

std::size_t Graph::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.weight.size() + p.bias.size();
  return n;
}

bool Graph::operator==(const Graph& other) const {
  if (!(input_ == other.input_) || layers_ != other.layers_) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!(params_[i].weight == other.params_[i].weight) || !(params_[i].bias == other.params_[i].bias)) return false;
  }
  return true;
}

void Graph::check_input(const Tensor& x, std::size_t& batch, std::size_t& length) const {
  if (x.rank() != 2 && x.rank() != 3) {
    throw ConfigError("input must be [M, T] or [B, M, T], got rank " + std::to_string(x.rank()));
  }
  const std::size_t offset = x.rank() == 3 ? 1 : 0;
  batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t m = x.dim(offset);
  length = x.dim(offset + 1);
  if (m != input_.channels || (input_.length != 0 && length != input_.length) || length == 0) {
    throw ConfigError("input shape mismatch: graph expects M=" + std::to_string(input_.channels) +
                      ", T=" + std::to_string(input_.length) + " but got M=" + std::to_string(m) +
                      ", T=" + std::to_string(length));
  }
}

ForwardPass Graph::forward(const Tensor& x, const ForwardOptions& options) const {
  std::size_t batch = 0;
  std::size_t length = 0;
  check_input(x, batch, length);
  std::size_t channels = input_.channels;

  Matrix act(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(batch * length));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t m = 0; m < channels; ++m)
      for (std::size_t t = 0; t < length; ++t)
        act(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(b * length + t)) =
            x[(b * channels + m) * length + t];

  ForwardPass pass;
  pass.owner_ = this;
  pass.batch_ = batch;
  pass.batched_input_ = x.rank() == 3;
  pass.input_shape_ = x.shape();
  pass.cached_ = options.keep_cache;
  if (options.keep_cache) pass.caches_.resize(layers_.size());

  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& spec = layers_[i];
    if (spec.kind == LayerKind::softmax) break;
    LayerCache cache;
    cache.in_channels = channels;
    cache.in_length = length;
    Matrix out;
    switch (spec.kind) {
      case LayerKind::conv1d: {
        ConstWeightMap w(params_[i].weight.data(), static_cast<Eigen::Index>(spec.units),
                         static_cast<Eigen::Index>(spec.kernel_size * channels));
        if (spec.stride == 1) {
          const std::size_t pad = spec.kernel_size / 2;
          Matrix padded = pad_sequences(act, channels, length, batch, pad);
          Matrix full;
          full.noalias() = w * window_view(padded, channels, spec.kernel_size);
          out = gather_valid(full, length, batch, length + 2 * pad);
          if (options.keep_cache) cache.input = std::move(padded);
        } else {
          Matrix col = im2col(act, channels, length, batch, spec.kernel_size, spec.stride);
          out.noalias() = w * col;
          if (options.keep_cache) cache.input = std::move(col);
        }
        if (!params_[i].bias.empty())
          out.colwise() += ConstVectorMap(params_[i].bias.data(), static_cast<Eigen::Index>(spec.units));
        channels = spec.units;
        length = conv_output_length(length, spec.stride);
        break;
      }
      case LayerKind::dense: {
        Matrix flat = flatten_sequence(act, channels, length, batch);
        ConstWeightMap w(params_[i].weight.data(), static_cast<Eigen::Index>(spec.units), flat.rows());
        out.noalias() = w * flat;
        if (!params_[i].bias.empty())
          out.colwise() += ConstVectorMap(params_[i].bias.data(), static_cast<Eigen::Index>(spec.units));
        if (options.keep_cache) cache.input = std::move(flat);
        channels = spec.units;
        length = 1;
        break;
      }
      case LayerKind::relu:
        if (options.keep_cache) {
          out = act.cwiseMax(0.0);
          cache.input = std::move(act);
        } else {
          out = std::move(act);
          out = out.cwiseMax(0.0);
        }
        break;
      case LayerKind::global_avg_pool: {
        out.resize(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(batch));
        for (std::size_t b = 0; b < batch; ++b)
          out.col(static_cast<Eigen::Index>(b)) =
              act.middleCols(static_cast<Eigen::Index>(b * length), static_cast<Eigen::Index>(length))
                  .rowwise()
                  .mean();
        length = 1;
        break;
      }
      case LayerKind::softmax: break;
    }
    if (options.training && spec.dropout_rate > 0.0) {
      if (options.dropout_rng == nullptr) throw StateError("training forward needs a dropout rng");
      Matrix mask = dropout_mask(out.rows(), out.cols(), spec.dropout_rate, *options.dropout_rng);
      out = out.cwiseProduct(mask);
      if (options.keep_cache) cache.mask = std::move(mask);
    }
    require_finite(out, i, spec.kind);
    act = std::move(out);
    if (options.keep_cache) pass.caches_[i] = std::move(cache);
  }

  const std::size_t classes = channels;
  pass.logits_ = pass.batched_input_ ? Tensor({batch, classes}) : Tensor({classes});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < classes; ++c)
      pass.logits_[b * classes + c] = act(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(b));
  return pass;
}

namespace {

Matrix conv_same_backward(const LayerSpec& spec, const Parameters& params, const LayerCache& cache,
                          const Matrix& grad, std::size_t batch, bool want_input, Parameters& g) {
  const std::size_t kernel = spec.kernel_size;
  const std::size_t in_ch = cache.in_channels;
  const std::size_t length = cache.in_length;
  const std::size_t pad = kernel / 2;
  const std::size_t padded_length = length + 2 * pad;
  const auto out_ch = grad.rows();
  const Eigen::Index full_cols = cache.input.cols() - static_cast<Eigen::Index>(kernel - 1);
  const auto lead = static_cast<Eigen::Index>(kernel - 1);

  // Output gradient scattered back to full-product columns, with kernel-1
  // zero columns on each side for the transposed convolution below.
  Matrix ext = Matrix::Zero(out_ch, full_cols + 2 * lead);
  for (std::size_t b = 0; b < batch; ++b)
    ext.middleCols(lead + static_cast<Eigen::Index>(b * padded_length), static_cast<Eigen::Index>(length)) =
        grad.middleCols(static_cast<Eigen::Index>(b * length), static_cast<Eigen::Index>(length));

  g.weight = Tensor(params.weight.shape());
  WeightMap dw(g.weight.data(), out_ch, static_cast<Eigen::Index>(kernel * in_ch));
  dw.noalias() = ext.middleCols(lead, full_cols) * window_view(cache.input, in_ch, kernel).transpose();
  if (!params.bias.empty()) {
    g.bias = Tensor(params.bias.shape());
    VectorMap(g.bias.data(), out_ch) = grad.rowwise().sum();
  }
  if (!want_input) return {};

  ConstWeightMap w(params.weight.data(), out_ch, static_cast<Eigen::Index>(kernel * in_ch));
  Matrix flipped(static_cast<Eigen::Index>(in_ch), static_cast<Eigen::Index>(kernel) * out_ch);
  for (std::size_t k = 0; k < kernel; ++k)
    flipped.middleCols(static_cast<Eigen::Index>(k) * out_ch, out_ch) =
        w.middleCols(static_cast<Eigen::Index>((kernel - 1 - k) * in_ch), static_cast<Eigen::Index>(in_ch))
            .transpose();
  Matrix d_padded;
  d_padded.noalias() = flipped * window_view(ext, static_cast<std::size_t>(out_ch), kernel);
  Matrix d_input(static_cast<Eigen::Index>(in_ch), static_cast<Eigen::Index>(batch * length));
  for (std::size_t b = 0; b < batch; ++b)
    d_input.middleCols(static_cast<Eigen::Index>(b * length), static_cast<Eigen::Index>(length)) =
        d_padded.middleCols(static_cast<Eigen::Index>(b * padded_length + pad), static_cast<Eigen::Index>(length));
  return d_input;
}

}  // namespace

Gradients Graph::backward(const ForwardPass& pass, const Tensor& loss_gradient, bool need_input_gradient) const {
  if (!pass.cached_ || pass.owner_ != this) {
    throw StateError("backward called without a cached forward pass on this graph");
  }
  if (loss_gradient.shape() != pass.logits_.shape()) {
    throw ConfigError("loss gradient shape does not match logits");
  }
  const std::size_t batch = pass.batch_;
  const std::size_t classes = output_units_;
  Matrix grad(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(batch));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < classes; ++c)
      grad(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(b)) = loss_gradient[b * classes + c];

  Gradients out;
  out.parameters.resize(layers_.size());
  for (std::size_t ii = layers_.size(); ii-- > 0;) {
    const LayerSpec& spec = layers_[ii];
    if (spec.kind == LayerKind::softmax) continue;
    const LayerCache& cache = pass.caches_[ii];
    const bool want_input = ii > 0 || need_input_gradient;
    if (cache.mask.size() > 0) grad = grad.cwiseProduct(cache.mask);
    switch (spec.kind) {
      case LayerKind::conv1d:
        if (spec.stride == 1) {
          grad = conv_same_backward(spec, params_[ii], cache, grad, batch, want_input, out.parameters[ii]);
          break;
        }
        [[fallthrough]];
      case LayerKind::dense: {
        Parameters& g = out.parameters[ii];
        g.weight = Tensor(params_[ii].weight.shape());
        WeightMap dw(g.weight.data(), grad.rows(), cache.input.rows());
        dw.noalias() = grad * cache.input.transpose();
        if (!params_[ii].bias.empty()) {
          g.bias = Tensor(params_[ii].bias.shape());
          VectorMap(g.bias.data(), grad.rows()) = grad.rowwise().sum();
        }
        if (want_input) {
          ConstWeightMap w(params_[ii].weight.data(), grad.rows(), cache.input.rows());
          Matrix dcol;
          dcol.noalias() = w.transpose() * grad;
          if (spec.kind == LayerKind::conv1d) {
            grad = col2im(dcol, cache.in_channels, cache.in_length, batch, spec.kernel_size, spec.stride);
          } else {
            grad = unflatten_sequence(dcol, cache.in_channels, cache.in_length, batch);
          }
        }
        break;
      }
      case LayerKind::relu:
        grad = (cache.input.array() > 0.0).select(grad, 0.0);
        break;
      case LayerKind::global_avg_pool: {
        const std::size_t length = cache.in_length;
        Matrix expanded(grad.rows(), static_cast<Eigen::Index>(batch * length));
        const double inv = 1.0 / static_cast<double>(length);
        for (std::size_t b = 0; b < batch; ++b)
          expanded.middleCols(static_cast<Eigen::Index>(b * length), static_cast<Eigen::Index>(length))
              .colwise() = grad.col(static_cast<Eigen::Index>(b)) * inv;
        grad = std::move(expanded);
        break;
      }
      case LayerKind::softmax: break;
    }
    if (!want_input) break;
  }

  if (need_input_gradient) {
    const std::size_t channels = input_.channels;
    const std::size_t length = static_cast<std::size_t>(grad.cols()) / batch;
    out.input = Tensor(pass.input_shape_);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t m = 0; m < channels; ++m)
        for (std::size_t t = 0; t < length; ++t)
          out.input[(b * channels + m) * length + t] =
              grad(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(b * length + t));
  }
  return out;
}

Tensor softmax(const Tensor& logits) {
  Tensor out = logits;
  const std::size_t classes = logits.shape().back();
  const std::size_t rows = logits.size() / std::max<std::size_t>(classes, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * classes;
    const double mx = *std::max_element(row, row + classes);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (std::size_t c = 0; c < classes; ++c) row[c] /= sum;
  }
  return out;
}

Tensor Graph::probabilities(const Tensor& x) const { return softmax(forward(x).logits()); }

Tensor Graph::input_gradient(const Tensor& x, std::size_t class_index, ScoreTarget target) const {
  if (class_index >= output_units_) {
    throw ParameterError("class_index " + std::to_string(class_index) + " out of range for " +
                         std::to_string(output_units_) + " classes");
  }
  ForwardOptions options;
  options.keep_cache = true;
  ForwardPass pass = forward(x, options);
  const std::size_t classes = output_units_;
  Tensor seed(pass.logits().shape());
  if (target == ScoreTarget::logit) {
    for (std::size_t b = 0; b < pass.batch(); ++b) seed[b * classes + class_index] = 1.0;
  } else {
    Tensor probs = softmax(pass.logits());
    for (std::size_t b = 0; b < pass.batch(); ++b) {
      const double pc = probs[b * classes + class_index];
      for (std::size_t j = 0; j < classes; ++j)
        seed[b * classes + j] = pc * ((j == class_index ? 1.0 : 0.0) - probs[b * classes + j]);
    }
  }
  return backward(pass, seed).input;
}

// ---------------------------------------------------------------- checkpoint

namespace {

nlohmann::json tensor_json(const Tensor& t) {
  return nlohmann::json{{"shape", t.shape()}, {"data", t.storage()}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<std::vector<std::size_t>>(), j.at("data").get<std::vector<double>>());
}

}  // namespace

std::string checkpoint_to_json(const Graph& graph, const std::string& extra_json) {
  nlohmann::json root;
  root["format"] = "attreval-checkpoint";
  root["version"] = kCheckpointVersion;
  root["input"] = {{"channels", graph.input_spec().channels}, {"length", graph.input_spec().length}};
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < graph.layers().size(); ++i) {
    const LayerSpec& s = graph.layers()[i];
    nlohmann::json l{{"kind", to_string(s.kind)},
                     {"units", s.units},
                     {"kernel_size", s.kernel_size},
                     {"stride", s.stride},
                     {"dropout_rate", s.dropout_rate},
                     {"use_bias", s.use_bias}};
    const Parameters& p = graph.parameters()[i];
    if (!p.weight.empty()) l["weight"] = tensor_json(p.weight);
    if (!p.bias.empty()) l["bias"] = tensor_json(p.bias);
    layers.push_back(std::move(l));
  }
  root["layers"] = std::move(layers);
  root["class_count"] = graph.class_count();
  root["metadata"] = nlohmann::json::parse(extra_json);
  return root.dump();
}

Graph checkpoint_from_json(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!root.contains("version")) throw ParseError("checkpoint lacks the mandatory version field");
  if (root.at("version").get<int>() != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + root.at("version").dump());
  }
  try {
    InputSpec input{root.at("input").at("channels").get<std::size_t>(),
                    root.at("input").at("length").get<std::size_t>()};
    std::vector<LayerSpec> specs;
    for (const auto& l : root.at("layers")) {
      LayerSpec s;
      s.kind = layer_kind_from_string(l.at("kind").get<std::string>());
      s.units = l.at("units").get<std::size_t>();
      s.kernel_size = l.at("kernel_size").get<std::size_t>();
      s.stride = l.at("stride").get<std::size_t>();
      s.dropout_rate = l.at("dropout_rate").get<double>();
      s.use_bias = l.value("use_bias", true);
      specs.push_back(s);
    }
    Graph graph(input, specs);
    std::size_t i = 0;
    for (const auto& l : root.at("layers")) {
      Parameters& p = graph.parameters()[i++];
      if (l.contains("weight")) {
        Tensor w = tensor_from_json(l.at("weight"));
        if (w.shape() != p.weight.shape()) throw ParseError("checkpoint weight shape mismatch at layer " + std::to_string(i - 1));
        p.weight = std::move(w);
      }
      if (l.contains("bias")) {
        Tensor b = tensor_from_json(l.at("bias"));
        if (b.shape() != p.bias.shape()) throw ParseError("checkpoint bias shape mismatch at layer " + std::to_string(i - 1));
        p.bias = std::move(b);
      }
    }
    return graph;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Graph& graph, const std::string& path, const std::string& extra_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot write checkpoint " + path);
  out << checkpoint_to_json(graph, extra_json) << '\n';
}

Graph load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot read checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace attreval::autodiff
