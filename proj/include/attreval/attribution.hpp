#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "attreval/autodiff.hpp"
#include "attreval/dataset.hpp"
#include "attreval/scorer.hpp"
#include "attreval/tensor.hpp"

namespace attreval::attribution {

enum class Method {
  saliency,
  grad_x_input,
  integrated_gradients,
  gradient_shap,
  shapley_value_sampling,
  kernel_shap,
  occlusion,
  random_control,
  oracle,
};

std::string to_string(Method method);
Method method_from_string(const std::string& name);
std::vector<Method> all_methods();
bool needs_gradients(Method method);

enum class Baseline { zeros, gaussian_noise };
enum class PlayerGrouping { per_point, per_segment };
// automatic enumerates exhaustively when that is no more work than sampling.
enum class SamplingMode { automatic, sample, enumerate };

std::string to_string(Baseline b);
Baseline baseline_from_string(const std::string& name);
std::string to_string(PlayerGrouping g);
PlayerGrouping grouping_from_string(const std::string& name);
std::string to_string(SamplingMode s);
SamplingMode sampling_from_string(const std::string& name);

struct AttributionParams {
  Baseline baseline = Baseline::zeros;  // IG, SVS, KernelSHAP
  std::size_t ig_steps = 64;
  std::size_t gs_baseline_count = 16;
  double gs_noise_std = 1.0;
  std::size_t svs_permutations = 25;
  std::size_t ks_coalitions = 0;  // 0: 2 * players + 2048
  PlayerGrouping grouping = PlayerGrouping::per_segment;  // SVS and KernelSHAP
  std::size_t segment_length = 10;
  SamplingMode sampling = SamplingMode::automatic;
  std::size_t occlusion_window = 10;
  std::size_t occlusion_stride = 0;  // 0: same as the window
  autodiff::ScoreTarget target = autodiff::ScoreTarget::probability;  // gradient methods
  std::uint64_t seed = 0;

  void validate() const;
};

// Maps that depend on the seed, and so differ between repetitions.
bool is_stochastic(Method method, const AttributionParams& params);

struct RelevanceMap {
  Tensor scores;  // [M, T]
  Method method = Method::random_control;
  std::size_t class_index = 0;
  std::uint64_t sample_id = 0;
};

// ------------------------------------------------------------ Shapley games

// A cooperative game over `players` players. `value` receives n row-major
// coalition masks ([n, players], 1 = present) and returns v for each.
struct CoalitionGame {
  std::size_t players = 0;
  std::function<std::vector<double>(const std::vector<std::uint8_t>& masks, std::size_t n)> value;
};

// Mean marginal contribution over random permutations, or over all n!
// permutations when enumerating.
std::vector<double> shapley_value_sampling(const CoalitionGame& game, std::size_t permutations, SamplingMode mode,
                                           Rng& rng);

// Shapley-kernel weighted least squares with the efficiency constraint
// enforced exactly. Enumeration uses every non-empty proper coalition;
// sampling draws `coalitions` coalitions (in complementary pairs) from the
// kernel distribution.
std::vector<double> kernel_shap(const CoalitionGame& game, std::size_t coalitions, SamplingMode mode, Rng& rng);

// Players of a [M, T] input: every point, or ceil(T / segment) segments per
// feature. Player p covers positions player_positions(...)[p].
std::vector<std::vector<std::size_t>> player_positions(std::size_t m, std::size_t t, PlayerGrouping grouping,
                                                       std::size_t segment_length);

// Game whose value is the scorer's class probability with absent players
// replaced by `baseline` values. Holds references to its arguments.
CoalitionGame model_game(const scorer::Scorer& scorer, const Tensor& x, const Tensor& baseline,
                         std::size_t class_index, const std::vector<std::vector<std::size_t>>& players);

// --------------------------------------------------------------- methods

Tensor make_baseline(const Tensor& x, Baseline kind, double noise_std, Rng& rng);

Tensor saliency(const autodiff::Graph& graph, const Tensor& x, std::size_t class_index, autodiff::ScoreTarget target);
Tensor grad_x_input(const autodiff::Graph& graph, const Tensor& x, std::size_t class_index,
                    autodiff::ScoreTarget target);
Tensor integrated_gradients(const autodiff::Graph& graph, const Tensor& x, const Tensor& baseline,
                            std::size_t class_index, std::size_t steps, autodiff::ScoreTarget target);
Tensor gradient_shap(const autodiff::Graph& graph, const Tensor& x, std::size_t class_index,
                     std::size_t baseline_count, double noise_std, autodiff::ScoreTarget target, Rng& rng);
Tensor occlusion(const scorer::Scorer& scorer, const Tensor& x, std::size_t class_index, std::size_t window,
                 std::size_t stride = 0);
Tensor random_control(const Tensor& x, std::uint64_t seed);
Tensor oracle_attribution(const data::TimeSeriesSample& sample);

// Relevance of one sample for `class_index`. Per-sample randomness is seeded
// by derive_seed(params.seed, {method, sample id}).
RelevanceMap attribute(Method method, const scorer::Scorer& scorer, const data::TimeSeriesSample& sample,
                       std::size_t class_index, const AttributionParams& params);

// -------------------------------------------------------------- storage

// One JSON header line followed by fixed-size binary records
// (uint64 sample id, uint64 class index, M*T little-endian doubles).
struct RelevanceFile {
  std::string header_json;
  std::vector<RelevanceMap> maps;
};

void save_relevance(const std::string& path, const std::vector<RelevanceMap>& maps, Method method,
                    const AttributionParams& params, const std::string& config_hash);
RelevanceFile load_relevance(const std::string& path);
std::string params_json(const AttributionParams& params);

}  // namespace attreval::attribution
