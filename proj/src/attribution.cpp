#include "attreval/attribution.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <Eigen/Dense>
#include <json.hpp>

#include "attreval/errors.hpp"

namespace attreval::attribution {

namespace {

constexpr std::size_t kEvalChunk = 128;

struct MethodName {
  Method method;
  const char* name;
};

constexpr MethodName kMethodNames[] = {
    {Method::saliency, "saliency"},
    {Method::grad_x_input, "grad_x_input"},
    {Method::integrated_gradients, "integrated_gradients"},
    {Method::gradient_shap, "gradient_shap"},
    {Method::shapley_value_sampling, "shapley_value_sampling"},
    {Method::kernel_shap, "kernel_shap"},
    {Method::occlusion, "occlusion"},
    {Method::random_control, "random_control"},
    {Method::oracle, "oracle"},
};

void check_sample(const Tensor& x) {
  if (x.rank() != 2 || x.size() == 0) throw ConfigError("attribution expects a non-empty [M, T] sample");
}

void check_class(const scorer::Scorer& scorer, std::size_t class_index) {
  if (class_index >= scorer.capabilities().class_count) {
    throw ParameterError("class_index " + std::to_string(class_index) + " out of range");
  }
}

// Scores of `class_index` for n stacked inputs produced by `fill(i, dst)`.
template <typename Fill>
std::vector<double> score_many(const scorer::Scorer& scorer, std::size_t m, std::size_t t, std::size_t n,
                               std::size_t class_index, Fill&& fill) {
  std::vector<double> out(n);
  const std::size_t per = m * t;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    const std::size_t len = std::min(kEvalChunk, n - start);
    Tensor batch({len, m, t});
    for (std::size_t i = 0; i < len; ++i) fill(start + i, batch.data() + i * per);
    const Tensor probs = scorer.score_batch(batch);
    const std::size_t c = probs.dim(1);
    for (std::size_t i = 0; i < len; ++i) out[start + i] = probs[i * c + class_index];
  }
  return out;
}

// Input gradients at n points filled by `fill`, reduced by `accumulate(i, grad)`.
template <typename Fill, typename Accumulate>
void gradients_at(const autodiff::Graph& graph, std::size_t m, std::size_t t, std::size_t n, std::size_t class_index,
                  autodiff::ScoreTarget target, Fill&& fill, Accumulate&& accumulate) {
  const std::size_t per = m * t;
  for (std::size_t start = 0; start < n; start += kEvalChunk / 2) {
    const std::size_t len = std::min(kEvalChunk / 2, n - start);
    Tensor batch({len, m, t});
    for (std::size_t i = 0; i < len; ++i) fill(start + i, batch.data() + i * per);
    const Tensor grad = graph.input_gradient(batch, class_index, target);
    for (std::size_t i = 0; i < len; ++i) accumulate(start + i, grad.data() + i * per);
  }
}

double factorial(std::size_t n) {
  double f = 1.0;
  for (std::size_t i = 2; i <= n; ++i) f *= static_cast<double>(i);
  return f;
}

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

}  // namespace

std::string to_string(Method method) {
  for (const auto& e : kMethodNames)
    if (e.method == method) return e.name;
  return "unknown";
}

Method method_from_string(const std::string& name) {
  for (const auto& e : kMethodNames)
    if (name == e.name) return e.method;
  if (name == "ig") return Method::integrated_gradients;
  if (name == "gs") return Method::gradient_shap;
  if (name == "svs") return Method::shapley_value_sampling;
  if (name == "ks") return Method::kernel_shap;
  throw ConfigError("unknown attribution method '" + name + "'");
}

std::vector<Method> all_methods() {
  std::vector<Method> out;
  for (const auto& e : kMethodNames) out.push_back(e.method);
  return out;
}

bool needs_gradients(Method method) {
  return method == Method::saliency || method == Method::grad_x_input || method == Method::integrated_gradients ||
         method == Method::gradient_shap;
}

bool is_stochastic(Method method, const AttributionParams& params) {
  switch (method) {
    case Method::gradient_shap:
    case Method::random_control: return true;
    case Method::shapley_value_sampling:
    case Method::kernel_shap: return params.sampling != SamplingMode::enumerate || params.baseline != Baseline::zeros;
    case Method::integrated_gradients: return params.baseline != Baseline::zeros;
    default: return false;
  }
}

std::string to_string(Baseline b) { return b == Baseline::zeros ? "zeros" : "gaussian_noise"; }

Baseline baseline_from_string(const std::string& name) {
  if (name == "zeros") return Baseline::zeros;
  if (name == "gaussian_noise") return Baseline::gaussian_noise;
  throw ConfigError("unknown baseline '" + name + "'");
}

std::string to_string(PlayerGrouping g) { return g == PlayerGrouping::per_point ? "per_point" : "per_segment"; }

PlayerGrouping grouping_from_string(const std::string& name) {
  if (name == "per_point") return PlayerGrouping::per_point;
  if (name == "per_segment") return PlayerGrouping::per_segment;
  throw ConfigError("unknown player grouping '" + name + "'");
}

std::string to_string(SamplingMode s) {
  switch (s) {
    case SamplingMode::automatic: return "auto";
    case SamplingMode::sample: return "sample";
    case SamplingMode::enumerate: return "enumerate";
  }
  return "auto";
}

SamplingMode sampling_from_string(const std::string& name) {
  if (name == "auto") return SamplingMode::automatic;
  if (name == "sample") return SamplingMode::sample;
  if (name == "enumerate") return SamplingMode::enumerate;
  throw ConfigError("unknown sampling mode '" + name + "'");
}

void AttributionParams::validate() const {
  if (ig_steps < 2) throw ParameterError("ig_steps must be >= 2");
  if (gs_baseline_count == 0) throw ParameterError("gs_baseline_count must be >= 1");
  if (!(gs_noise_std >= 0.0)) throw ParameterError("gs_noise_std must be >= 0");
  if (svs_permutations == 0) throw ParameterError("svs_permutations must be >= 1");
  if (segment_length == 0) throw ParameterError("segment_length must be >= 1");
  if (occlusion_window == 0) throw ParameterError("occlusion_window must be >= 1");
}

// ------------------------------------------------------------ Shapley games

std::vector<double> shapley_value_sampling(const CoalitionGame& game, std::size_t permutations, SamplingMode mode,
                                           Rng& rng) {
  const std::size_t n = game.players;
  if (n == 0) return {};
  if (permutations == 0 && mode != SamplingMode::enumerate) throw ParameterError("svs needs at least one permutation");
  const double total = factorial(n);
  const bool enumerate =
      mode == SamplingMode::enumerate || (mode == SamplingMode::automatic && total <= static_cast<double>(permutations));
  if (enumerate && n > 9) throw ParameterError("permutation enumeration is limited to 9 players");

  const std::vector<std::uint8_t> empty(n, 0);
  const double v_empty = game.value(empty, 1).front();

  std::vector<double> phi(n, 0.0);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::uint8_t> masks(n * n);
  std::size_t used = 0;
  auto walk = [&]() {
    std::uint8_t* row = masks.data();
    std::fill(masks.begin(), masks.end(), 0);
    for (std::size_t j = 0; j < n; ++j, row += n) {
      if (j > 0) std::copy_n(row - n, n, row);
      row[perm[j]] = 1;
    }
    const std::vector<double> v = game.value(masks, n);
    double prev = v_empty;
    for (std::size_t j = 0; j < n; ++j) {
      phi[perm[j]] += v[j] - prev;
      prev = v[j];
    }
    ++used;
  };
  if (enumerate) {
    do walk();
    while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    for (std::size_t p = 0; p < permutations; ++p) {
      std::shuffle(perm.begin(), perm.end(), rng);
      walk();
    }
  }
  for (double& v : phi) v /= static_cast<double>(used);
  return phi;
}

std::vector<double> kernel_shap(const CoalitionGame& game, std::size_t coalitions, SamplingMode mode, Rng& rng) {
  const std::size_t n = game.players;
  if (n == 0) return {};
  std::vector<std::uint8_t> ends(2 * n, 0);
  std::fill(ends.begin() + static_cast<std::ptrdiff_t>(n), ends.end(), 1);
  const std::vector<double> v_ends = game.value(ends, 2);
  const double v0 = v_ends[0];
  const double delta = v_ends[1] - v0;
  if (n == 1) return {delta};
  if (n == 2 && coalitions == 0) coalitions = 2;
  if (coalitions == 0 && mode != SamplingMode::enumerate) throw ParameterError("kernel_shap needs at least one coalition");

  const double proper = n < 63 ? std::ldexp(1.0, static_cast<int>(n)) - 2.0 : HUGE_VAL;
  const bool enumerate = mode == SamplingMode::enumerate ||
                         (mode == SamplingMode::automatic && proper <= static_cast<double>(coalitions));
  if (enumerate && n > 20) throw ParameterError("coalition enumeration is limited to 20 players");

  std::vector<std::uint8_t> masks;
  std::vector<double> weights;
  if (enumerate) {
    const std::uint64_t count = (std::uint64_t{1} << n) - 2;
    masks.resize(count * n);
    weights.resize(count);
    for (std::uint64_t s = 1; s <= count; ++s) {
      std::uint8_t* row = masks.data() + (s - 1) * n;
      for (std::size_t i = 0; i < n; ++i) row[i] = static_cast<std::uint8_t>((s >> i) & 1U);
      const auto size = static_cast<std::size_t>(std::popcount(s));
      weights[s - 1] = static_cast<double>(n - 1) / (binomial(n, size) * static_cast<double>(size * (n - size)));
    }
  } else {
    // Sizes drawn with the kernel's total mass per size, 1 / (s (n - s)).
    std::vector<double> size_mass(n - 1);
    for (std::size_t s = 1; s < n; ++s) size_mass[s - 1] = 1.0 / static_cast<double>(s * (n - s));
    std::discrete_distribution<std::size_t> pick_size(size_mass.begin(), size_mass.end());
    const std::size_t pairs = (coalitions + 1) / 2;
    masks.assign(2 * pairs * n, 0);
    weights.assign(2 * pairs, 1.0);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t p = 0; p < pairs; ++p) {
      const std::size_t size = pick_size(rng) + 1;
      for (std::size_t i = 0; i < size; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(order[i], order[pick(rng)]);
      }
      std::uint8_t* row = masks.data() + 2 * p * n;
      std::uint8_t* complement = row + n;
      std::fill_n(complement, n, 1);
      for (std::size_t i = 0; i < size; ++i) {
        row[order[i]] = 1;
        complement[order[i]] = 0;
      }
    }
  }
  const std::size_t rows = weights.size();
  const std::vector<double> v = game.value(masks, rows);

  // Eliminate the last player through the efficiency constraint.
  Eigen::MatrixXd a(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n - 1));
  Eigen::VectorXd b(static_cast<Eigen::Index>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* row = masks.data() + r * n;
    const double w = std::sqrt(weights[r]);
    const double last = row[n - 1];
    for (std::size_t i = 0; i + 1 < n; ++i)
      a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = w * (row[i] - last);
    b(static_cast<Eigen::Index>(r)) = w * (v[r] - v0 - last * delta);
  }
  const Eigen::VectorXd head = a.colPivHouseholderQr().solve(b);
  std::vector<double> phi(n);
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    phi[i] = head(static_cast<Eigen::Index>(i));
    sum += phi[i];
  }
  phi[n - 1] = delta - sum;
  return phi;
}

std::vector<std::vector<std::size_t>> player_positions(std::size_t m, std::size_t t, PlayerGrouping grouping,
                                                       std::size_t segment_length) {
  const std::size_t seg = grouping == PlayerGrouping::per_point ? 1 : std::max<std::size_t>(segment_length, 1);
  const std::size_t per_feature = (t + seg - 1) / seg;
  std::vector<std::vector<std::size_t>> players;
  players.reserve(m * per_feature);
  for (std::size_t f = 0; f < m; ++f)
    for (std::size_t s = 0; s < per_feature; ++s) {
      std::vector<std::size_t> positions;
      for (std::size_t i = s * seg; i < std::min(t, (s + 1) * seg); ++i) positions.push_back(f * t + i);
      players.push_back(std::move(positions));
    }
  return players;
}

CoalitionGame model_game(const scorer::Scorer& scorer, const Tensor& x, const Tensor& baseline,
                         std::size_t class_index, const std::vector<std::vector<std::size_t>>& players) {
  check_sample(x);
  if (baseline.shape() != x.shape()) throw ConfigError("baseline shape differs from the sample");
  check_class(scorer, class_index);
  CoalitionGame game;
  game.players = players.size();
  game.value = [&scorer, &x, &baseline, class_index, &players](const std::vector<std::uint8_t>& masks, std::size_t n) {
    const std::size_t np = players.size();
    return score_many(scorer, x.dim(0), x.dim(1), n, class_index, [&](std::size_t i, double* dst) {
      std::copy(baseline.values().begin(), baseline.values().end(), dst);
      const std::uint8_t* row = masks.data() + i * np;
      for (std::size_t p = 0; p < np; ++p)
        if (row[p])
          for (std::size_t pos : players[p]) dst[pos] = x[pos];
    });
  };
  return game;
}

// --------------------------------------------------------------- methods

Tensor make_baseline(const Tensor& x, Baseline kind, double noise_std, Rng& rng) {
  Tensor out(x.shape());
  if (kind == Baseline::gaussian_noise)
    for (double& v : out.storage()) v = noise_std * standard_normal(rng);
  return out;
}

Tensor saliency(const autodiff::Graph& graph, const Tensor& x, std::size_t class_index, autodiff::ScoreTarget target) {
  check_sample(x);
  Tensor g = graph.input_gradient(x, class_index, target);
  for (double& v : g.storage()) v = std::abs(v);
  return g;
}

Tensor grad_x_input(const autodiff::Graph& graph, const Tensor& x, std::size_t class_index,
                    autodiff::ScoreTarget target) {
  check_sample(x);
  Tensor g = graph.input_gradient(x, class_index, target);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= x[i];
  return g;
}

Tensor integrated_gradients(const autodiff::Graph& graph, const Tensor& x, const Tensor& baseline,
                            std::size_t class_index, std::size_t steps, autodiff::ScoreTarget target) {
  check_sample(x);
  if (steps < 2) throw ParameterError("ig_steps must be >= 2");
  if (baseline.shape() != x.shape()) throw ConfigError("baseline shape differs from the sample");
  const std::size_t per = x.size();
  const double h = 1.0 / static_cast<double>(steps - 1);
  std::vector<double> avg(per, 0.0);
  // trapezoid rule over alpha in [0, 1]
  gradients_at(
      graph, x.dim(0), x.dim(1), steps, class_index, target,
      [&](std::size_t j, double* dst) {
        const double alpha = static_cast<double>(j) * h;
        for (std::size_t i = 0; i < per; ++i) dst[i] = baseline[i] + alpha * (x[i] - baseline[i]);
      },
      [&](std::size_t j, const double* grad) {
        const double w = (j == 0 || j + 1 == steps) ? 0.5 * h : h;
        for (std::size_t i = 0; i < per; ++i) avg[i] += w * grad[i];
      });
  Tensor out(x.shape());
  for (std::size_t i = 0; i < per; ++i) out[i] = (x[i] - baseline[i]) * avg[i];
  return out;
}

Tensor gradient_shap(const autodiff::Graph& graph, const Tensor& x, std::size_t class_index,
                     std::size_t baseline_count, double noise_std, autodiff::ScoreTarget target, Rng& rng) {
  check_sample(x);
  if (baseline_count == 0) throw ParameterError("gs_baseline_count must be >= 1");
  const std::size_t per = x.size();
  std::vector<double> baselines(baseline_count * per);
  std::vector<double> alphas(baseline_count);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t j = 0; j < baseline_count; ++j) {
    for (std::size_t i = 0; i < per; ++i) baselines[j * per + i] = noise_std * standard_normal(rng);
    alphas[j] = unit(rng);
  }
  Tensor out(x.shape());
  gradients_at(
      graph, x.dim(0), x.dim(1), baseline_count, class_index, target,
      [&](std::size_t j, double* dst) {
        const double* b = baselines.data() + j * per;
        for (std::size_t i = 0; i < per; ++i) dst[i] = b[i] + alphas[j] * (x[i] - b[i]);
      },
      [&](std::size_t j, const double* grad) {
        const double* b = baselines.data() + j * per;
        for (std::size_t i = 0; i < per; ++i) out[i] += grad[i] * (x[i] - b[i]);
      });
  for (double& v : out.storage()) v /= static_cast<double>(baseline_count);
  return out;
}

Tensor occlusion(const scorer::Scorer& scorer, const Tensor& x, std::size_t class_index, std::size_t window,
                 std::size_t stride) {
  check_sample(x);
  check_class(scorer, class_index);
  const std::size_t m = x.dim(0);
  const std::size_t t = x.dim(1);
  if (window == 0) throw ParameterError("occlusion window must be >= 1");
  if (window > t) {
    throw ParameterError("occlusion window " + std::to_string(window) + " exceeds series length " + std::to_string(t));
  }
  if (stride == 0) stride = window;
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + window <= t; s += stride) starts.push_back(s);
  if (starts.back() + window < t) starts.push_back(t - window);

  struct Patch {
    std::size_t feature;
    std::size_t start;
  };
  std::vector<Patch> patches;
  for (std::size_t f = 0; f < m; ++f)
    for (std::size_t s : starts) patches.push_back({f, s});

  const double original =
      score_many(scorer, m, t, 1, class_index, [&](std::size_t, double* dst) { std::copy_n(x.data(), x.size(), dst); })
          .front();
  const std::vector<double> occluded = score_many(scorer, m, t, patches.size(), class_index, [&](std::size_t i, double* dst) {
    std::copy_n(x.data(), x.size(), dst);
    std::fill_n(dst + patches[i].feature * t + patches[i].start, window, 0.0);
  });

  Tensor out(x.shape());
  std::vector<double> hits(x.size(), 0.0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const std::size_t base = patches[i].feature * t + patches[i].start;
    for (std::size_t j = 0; j < window; ++j) {
      out[base + j] += original - occluded[i];
      hits[base + j] += 1.0;
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= hits[i];
  return out;
}

Tensor random_control(const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  Tensor out(x.shape());
  for (double& v : out.storage()) v = standard_normal(rng);
  return out;
}

Tensor oracle_attribution(const data::TimeSeriesSample& sample) {
  if (sample.block_mask.size() != sample.values.size()) {
    throw ParameterError("oracle attribution needs the block mask of sample " + std::to_string(sample.id));
  }
  Tensor out(sample.values.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sample.block_mask[i] ? 1.0 : -1.0;
  return out;
}

RelevanceMap attribute(Method method, const scorer::Scorer& scorer, const data::TimeSeriesSample& sample,
                       std::size_t class_index, const AttributionParams& params) {
  params.validate();
  const Tensor& x = sample.values;
  check_sample(x);
  Rng rng(derive_seed(params.seed, {static_cast<std::uint64_t>(method), sample.id}));
  const autodiff::Graph* graph = scorer.graph();
  if (needs_gradients(method) && graph == nullptr) {
    throw ConfigError("method " + to_string(method) +
                      " needs input gradients; external scorers support shapley_value_sampling, kernel_shap, "
                      "occlusion, random_control and oracle");
  }
  RelevanceMap map;
  map.method = method;
  map.class_index = class_index;
  map.sample_id = sample.id;
  switch (method) {
    case Method::saliency: map.scores = saliency(*graph, x, class_index, params.target); break;
    case Method::grad_x_input: map.scores = grad_x_input(*graph, x, class_index, params.target); break;
    case Method::integrated_gradients: {
      const Tensor baseline = make_baseline(x, params.baseline, params.gs_noise_std, rng);
      map.scores = integrated_gradients(*graph, x, baseline, class_index, params.ig_steps, params.target);
      break;
    }
    case Method::gradient_shap:
      map.scores = gradient_shap(*graph, x, class_index, params.gs_baseline_count, params.gs_noise_std, params.target,
                                 rng);
      break;
    case Method::shapley_value_sampling:
    case Method::kernel_shap: {
      const Tensor baseline = make_baseline(x, params.baseline, params.gs_noise_std, rng);
      const auto players = player_positions(x.dim(0), x.dim(1), params.grouping, params.segment_length);
      const CoalitionGame game = model_game(scorer, x, baseline, class_index, players);
      std::vector<double> phi;
      if (method == Method::shapley_value_sampling) {
        phi = shapley_value_sampling(game, params.svs_permutations, params.sampling, rng);
      } else {
        const std::size_t budget = params.ks_coalitions > 0 ? params.ks_coalitions : 2 * players.size() + 2048;
        phi = kernel_shap(game, budget, params.sampling, rng);
      }
      // a segment's value is shared evenly by its positions
      map.scores = Tensor(x.shape());
      for (std::size_t p = 0; p < players.size(); ++p)
        for (std::size_t pos : players[p]) map.scores[pos] = phi[p] / static_cast<double>(players[p].size());
      break;
    }
    case Method::occlusion:
      map.scores = occlusion(scorer, x, class_index, params.occlusion_window, params.occlusion_stride);
      break;
    case Method::random_control: map.scores = random_control(x, rng()); break;
    case Method::oracle: map.scores = oracle_attribution(sample); break;
  }
  if (!map.scores.all_finite()) {
    throw NumericError("non-finite relevance from " + to_string(method) + " on sample " + std::to_string(sample.id));
  }
  return map;
}

// -------------------------------------------------------------- storage

std::string params_json(const AttributionParams& p) {
  nlohmann::json j;
  j["baseline"] = to_string(p.baseline);
  j["ig_steps"] = p.ig_steps;
  j["gs_baseline_count"] = p.gs_baseline_count;
  j["gs_noise_std"] = p.gs_noise_std;
  j["svs_permutations"] = p.svs_permutations;
  j["ks_coalitions"] = p.ks_coalitions;
  j["grouping"] = to_string(p.grouping);
  j["segment_length"] = p.segment_length;
  j["sampling"] = to_string(p.sampling);
  j["occlusion_window"] = p.occlusion_window;
  j["occlusion_stride"] = p.occlusion_stride;
  j["target"] = autodiff::to_string(p.target);
  j["seed"] = p.seed;
  return j.dump();
}

static_assert(std::endian::native == std::endian::little, "relevance files are little-endian");

void save_relevance(const std::string& path, const std::vector<RelevanceMap>& maps, Method method,
                    const AttributionParams& params, const std::string& config_hash) {
  std::size_t m = 0, t = 0;
  if (!maps.empty()) {
    m = maps.front().scores.dim(0);
    t = maps.front().scores.dim(1);
  }
  nlohmann::json header;
  header["format"] = "attreval-relevance";
  header["version"] = 1;
  header["method"] = to_string(method);
  header["params"] = nlohmann::json::parse(params_json(params));
  header["config_hash"] = config_hash;
  header["m"] = m;
  header["t"] = t;
  header["count"] = maps.size();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot write relevance file " + path);
  out << header.dump() << '\n';
  for (const auto& map : maps) {
    if (map.scores.rank() != 2 || map.scores.dim(0) != m || map.scores.dim(1) != t) {
      throw ArtifactError("relevance maps in one file must share a shape");
    }
    const std::uint64_t ids[2] = {map.sample_id, map.class_index};
    out.write(reinterpret_cast<const char*>(ids), sizeof ids);
    out.write(reinterpret_cast<const char*>(map.scores.data()), static_cast<std::streamsize>(m * t * sizeof(double)));
  }
  if (!out) throw ArtifactError("failed writing relevance file " + path);
}

RelevanceFile load_relevance(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("missing relevance file " + path);
  RelevanceFile file;
  std::getline(in, file.header_json);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(file.header_json);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad relevance header: " + e.what());
  }
  if (header.value("format", "") != "attreval-relevance" || header.value("version", 0) != 1) {
    throw ParseError(path + ": not a version 1 relevance file");
  }
  const Method method = method_from_string(header.at("method").get<std::string>());
  const auto m = header.at("m").get<std::size_t>();
  const auto t = header.at("t").get<std::size_t>();
  const auto count = header.at("count").get<std::size_t>();
  file.maps.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    RelevanceMap map;
    std::uint64_t ids[2];
    in.read(reinterpret_cast<char*>(ids), sizeof ids);
    map.scores = Tensor({m, t});
    in.read(reinterpret_cast<char*>(map.scores.data()), static_cast<std::streamsize>(m * t * sizeof(double)));
    if (!in) throw ParseError(path + ": truncated at record " + std::to_string(i));
    map.sample_id = ids[0];
    map.class_index = ids[1];
    map.method = method;
    file.maps.push_back(std::move(map));
  }
  return file;
}

}  // namespace attreval::attribution
