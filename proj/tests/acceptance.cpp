// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
// the exit status is non-zero when any selected criterion fails.
//
//   acceptance [criterion ...] --work DIR --cli PATH --smoke-config PATH
//
// Pipeline runs are cached under --work, so criteria that share a trained
// model only pay for it once.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "attreval/attribution.hpp"
#include "attreval/autodiff.hpp"
#include "attreval/classifier.hpp"
#include "attreval/dataset.hpp"
#include "attreval/errors.hpp"
#include "attreval/metrics.hpp"
#include "attreval/pipeline.hpp"
#include "attreval/rng.hpp"
#include "attreval/scorer.hpp"
#include "attreval/stats.hpp"

namespace fs = std::filesystem;
using namespace attreval;
using attribution::Method;

namespace {

struct Context {
  fs::path work;
  std::string cli;
  std::string smoke_config;
  bool verbose = false;
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

pipeline::RunOptions run_options(const Context& ctx, const fs::path& root) {
  pipeline::RunOptions o;
  o.output_root = root.string();
  if (ctx.verbose) o.log = [](const std::string& s) { std::cerr << "  | " << s << "\n"; };
  else o.log = [](const std::string&) {};
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// The desk-scale synthetic experiment: 7500 series of length 500, the
// default classifier, 200 evaluated test samples.
pipeline::PipelineConfig desk_config(std::uint64_t seed) {
  pipeline::PipelineConfig c;
  c.seed = seed;
  c.max_samples = 200;
  return c;
}

pipeline::PipelineConfig ranking_config() {
  auto c = desk_config(0);
  c.repetitions = 5;
  c.methods = attribution::all_methods();
  return c;
}

// --------------------------------------------------------------- gradients

double objective(const autodiff::Graph& g, const Tensor& x, const Tensor& w) {
  const Tensor out = g.forward(x).logits();
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * w[i];
  return s;
}

Outcome gradients(const Context&) {
  using autodiff::LayerSpec;
  struct Case {
    std::string name;
    autodiff::InputSpec input;
    std::function<std::vector<LayerSpec>(std::size_t probe)> layers;
  };
  const std::vector<Case> cases = {
      {"conv1d", {3, 12}, [](std::size_t p) { return std::vector{LayerSpec::conv1d(4, 5, 1 + p % 2), LayerSpec::global_avg_pool()}; }},
      {"dense", {3, 6}, [](std::size_t) { return std::vector{LayerSpec::dense(4)}; }},
      {"relu", {3, 6}, [](std::size_t) { return std::vector{LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(3)}; }},
      {"global_avg_pool", {3, 10}, [](std::size_t) { return std::vector{LayerSpec::global_avg_pool()}; }},
      {"softmax", {3, 6}, [](std::size_t) { return std::vector{LayerSpec::dense(4), LayerSpec::softmax()}; }},
  };
  constexpr std::size_t kProbes = 100;
  constexpr std::size_t kBatch = 2;
  constexpr double kStep = 1e-6;
  Stopwatch clock;
  double worst = 0.0;
  std::string worst_kind;
  std::vector<std::string> parts;
  for (const auto& c : cases) {
    double case_worst = 0.0;
    for (std::size_t probe = 0; probe < kProbes; ++probe) {
      Rng rng(derive_seed(2024, {probe, c.name.size()}));
      autodiff::Graph g(c.input, c.layers(probe));
      g.initialize(rng());
      std::normal_distribution<double> n(0.0, 0.5);
      for (auto& p : g.parameters()) {
        for (double& v : p.weight.storage()) v = n(rng);
        for (double& v : p.bias.storage()) v = n(rng);
      }
      Tensor x({kBatch, c.input.channels, c.input.length});
      for (double& v : x.storage()) v = standard_normal(rng);
      const auto pass = g.forward(x, {.training = false, .keep_cache = true});
      Tensor w(pass.logits().shape());
      for (double& v : w.storage()) v = standard_normal(rng);
      const auto grads = g.backward(pass, w);

      std::vector<double> analytic, numeric;
      for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor up = x, down = x;
        up[i] += kStep;
        down[i] -= kStep;
        analytic.push_back(grads.input[i]);
        numeric.push_back((objective(g, up, w) - objective(g, down, w)) / (2 * kStep));
      }
      for (std::size_t layer = 0; layer < g.parameters().size(); ++layer) {
        for (int which = 0; which < 2; ++which) {
          Tensor& param = which == 0 ? g.parameters()[layer].weight : g.parameters()[layer].bias;
          const Tensor& grad = which == 0 ? grads.parameters[layer].weight : grads.parameters[layer].bias;
          for (std::size_t i = 0; i < param.size(); ++i) {
            const double saved = param[i];
            param[i] = saved + kStep;
            const double up = objective(g, x, w);
            param[i] = saved - kStep;
            const double down = objective(g, x, w);
            param[i] = saved;
            analytic.push_back(grad[i]);
            numeric.push_back((up - down) / (2 * kStep));
          }
        }
      }
      double diff = 0.0, na = 0.0, nn = 0.0;
      for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
      }
      const double scale = std::sqrt(std::max(na, nn));
      const double rel = scale > 0.0 ? std::sqrt(diff) / scale : 0.0;
      case_worst = std::max(case_worst, rel);
    }
    parts.push_back(fmt::format("{} {:.1e}", c.name, case_worst));
    if (case_worst > worst) {
      worst = case_worst;
      worst_kind = c.name;
    }
  }
  const double elapsed = clock.seconds();
  return {worst <= 1e-4 && elapsed < 30.0,
          fmt::format("max relative error {:.2e} over {} probes per layer kind ({}); {:.1f} s", worst, kProbes,
                      fmt::join(parts, ", "), elapsed)};
}

// ---------------------------------------------------------------- accuracy

double train_and_score(data::SyntheticConfig dc, std::uint64_t seed) {
  dc.seed = seed;
  auto split = data::split_dataset(data::generate(dc), seed);
  model::TrainConfig tc;
  tc.seed = seed;
  return model::train(split, tc).test_accuracy;
}

Outcome accuracy(const Context&) {
  Stopwatch full_clock;
  std::vector<double> accs;
  for (std::uint64_t seed : {1u, 2u, 3u}) accs.push_back(train_and_score(data::SyntheticConfig{}, seed));
  const double full_time = full_clock.seconds();
  const double mean = std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());

  data::SyntheticConfig smoke;
  smoke.n_samples = 1000;
  smoke.length = 128;
  smoke.block_length = 25;
  Stopwatch smoke_clock;
  const double smoke_acc = train_and_score(smoke, 1);
  const double smoke_time = smoke_clock.seconds();

  const bool pass = mean >= 0.90 && full_time < 20 * 60.0 && smoke_acc >= 0.85 && smoke_time < 120.0;
  return {pass, fmt::format("n=7500 mean test accuracy {:.4f} ({:.4f}) in {:.0f} s; n=1000 T=128 accuracy {:.4f} in {:.1f} s",
                            mean, fmt::join(accs, ", "), full_time, smoke_acc, smoke_time)};
}

// ----------------------------------------------------------- IG completeness

Outcome ig_completeness(const Context& ctx) {
  pipeline::Pipeline p(ranking_config(), run_options(ctx, ctx.work / "ranking"));
  p.generate();
  p.train();
  auto samples = p.evaluation_samples();
  samples.resize(std::min<std::size_t>(samples.size(), 50));
  const auto& graph = *p.scorer().graph();
  double worst = 0.0, total_error = 0.0;
  std::size_t over = 0;
  for (const auto& s : samples) {
    const Tensor probs = graph.probabilities(s.values);
    const std::size_t cls = static_cast<std::size_t>(
        std::max_element(probs.values().begin(), probs.values().end()) - probs.values().begin());
    const Tensor zero(s.values.shape());
    const Tensor ig = attribution::integrated_gradients(graph, s.values, zero, cls, 256,
                                                        autodiff::ScoreTarget::probability);
    const double total = std::accumulate(ig.values().begin(), ig.values().end(), 0.0);
    const double gap = probs[cls] - graph.probabilities(zero)[cls];
    const double error = std::abs(total - gap);
    worst = std::max(worst, error);
    total_error += error;
    over += error > 1e-3;
  }
  return {samples.size() == 50 && worst <= 1e-3,
          fmt::format("max |sum IG - (S(X) - S(0))| = {:.2e} (mean {:.2e}, {} above 1e-3) on {} test samples, 256 steps",
                      worst, total_error / static_cast<double>(samples.size()), over, samples.size())};
}

// ------------------------------------------------------------------ Shapley

std::vector<double> subset_shapley(std::size_t n, const std::function<double(unsigned)>& v) {
  std::vector<double> fact(n + 1, 1.0);
  for (std::size_t i = 1; i <= n; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);
  std::vector<double> phi(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (unsigned s = 0; s < (1u << n); ++s) {
      if (s & (1u << i)) continue;
      const auto size = static_cast<std::size_t>(__builtin_popcount(s));
      const double weight = fact[size] * fact[n - size - 1] / fact[n];
      phi[i] += weight * (v(s | (1u << i)) - v(s));
    }
  }
  return phi;
}

Outcome shapley(const Context&) {
  constexpr std::size_t kPlayers = 5;
  double enum_svs = 0.0, enum_ks = 0.0, sampled = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    autodiff::Graph g({1, kPlayers}, {autodiff::LayerSpec::dense(8), autodiff::LayerSpec::relu(),
                                      autodiff::LayerSpec::dense(2)});
    g.initialize(seed);
    Rng rng(seed);
    for (auto& p : g.parameters())
      for (double& v : p.bias.storage()) v = 0.3 * standard_normal(rng);
    Tensor x({1, kPlayers});
    for (double& v : x.storage()) v = 2.0 * standard_normal(rng);
    const Tensor baseline({1, kPlayers});
    scorer::ModelScorer sc(g);

    const auto exact = subset_shapley(kPlayers, [&](unsigned s) {
      Tensor masked({1, kPlayers});
      for (std::size_t i = 0; i < kPlayers; ++i) masked[i] = (s & (1u << i)) ? x[i] : 0.0;
      return g.probabilities(masked)[0];
    });
    const auto players = attribution::player_positions(1, kPlayers, attribution::PlayerGrouping::per_point, 1);
    const auto game = attribution::model_game(sc, x, baseline, 0, players);
    const auto svs = attribution::shapley_value_sampling(game, 1, attribution::SamplingMode::enumerate, rng);
    const auto ks = attribution::kernel_shap(game, 1, attribution::SamplingMode::enumerate, rng);
    const auto approx = attribution::shapley_value_sampling(game, 2000, attribution::SamplingMode::sample, rng);
    for (std::size_t i = 0; i < kPlayers; ++i) {
      enum_svs = std::max(enum_svs, std::abs(svs[i] - exact[i]));
      enum_ks = std::max(enum_ks, std::abs(ks[i] - exact[i]));
      sampled = std::max(sampled, std::abs(approx[i] - exact[i]));
    }
  }
  return {enum_svs <= 1e-8 && enum_ks <= 1e-8 && sampled <= 0.05,
          fmt::format("10 random 5-input models: enumerated SVS {:.1e}, enumerated KernelSHAP {:.1e}, "
                      "2000-permutation SVS {:.3f} max abs error",
                      enum_svs, enum_ks, sampled)};
}

// ------------------------------------------------------------------ moments

struct OracleMoments {
  double skew;
  double ekurt;
};

OracleMoments direct_moments(const std::vector<double>& xs) {
  long double mean = 0.0L;
  for (double v : xs) mean += v;
  mean /= static_cast<long double>(xs.size());
  long double m2 = 0.0L, m3 = 0.0L, m4 = 0.0L;
  for (double v : xs) {
    const long double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  const auto n = static_cast<long double>(xs.size());
  m2 /= n;
  m3 /= n;
  m4 /= n;
  return {static_cast<double>(m3 / std::pow(m2, 1.5L)), static_cast<double>(m4 / (m2 * m2) - 3.0L)};
}

Outcome moments(const Context&) {
  Rng rng(77);
  std::uniform_int_distribution<std::size_t> size(4, 400);
  std::uniform_int_distribution<int> family(0, 3);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  std::exponential_distribution<double> expo(2.0);
  std::lognormal_distribution<double> logn(0.0, 0.8);
  double worst = 0.0;
  for (int set = 0; set < 1000; ++set) {
    std::vector<double> xs(size(rng));
    const int f = family(rng);
    for (double& v : xs) {
      switch (f) {
        case 0: v = normal(rng); break;
        case 1: v = uniform(rng); break;
        case 2: v = 1.0 - expo(rng); break;
        default: v = logn(rng); break;
      }
    }
    const auto oracle = direct_moments(xs);
    worst = std::max({worst, std::abs(stats::skewness(xs).value - oracle.skew),
                      std::abs(stats::excess_kurtosis(xs).value - oracle.ekurt)});
  }
  constexpr std::size_t kLarge = 100000;
  std::vector<double> gauss(kLarge), flat(kLarge);
  for (double& v : gauss) v = normal(rng);
  for (double& v : flat) v = uniform(rng);
  const double gs = stats::skewness(gauss).value, gk = stats::excess_kurtosis(gauss).value;
  const double us = stats::skewness(flat).value, uk = stats::excess_kurtosis(flat).value;
  const bool asymptotic = std::abs(gs) <= 0.05 && std::abs(gk) <= 0.05 && std::abs(us) <= 0.05 &&
                          std::abs(uk + 1.2) <= 0.1;
  return {worst <= 1e-12 && asymptotic,
          fmt::format("max deviation from direct moments {:.1e} over 1000 sets; L=1e5 normal skew {:+.3f} "
                      "ekurt {:+.3f}, uniform skew {:+.3f} ekurt {:+.3f}",
                      worst, gs, gk, us, uk)};
}

// ------------------------------------------------------------------- shapes

std::vector<double> draw_set(std::uint64_t seed, const std::function<double(Rng&)>& f) {
  Rng rng(seed);
  std::vector<double> out(1500);
  for (double& v : out) v = f(rng);
  return out;
}

Outcome shapes(const Context&) {
  std::exponential_distribution<double> tail(30.0);
  std::uniform_real_distribution<double> u(0.0, 1.0), low(0.0, 0.6), high(0.4, 1.0);
  std::normal_distribution<double> mid(0.5, 0.1), near0(0.02, 0.03), near1(0.97, 0.03);
  // A: most samples fully dropped with a few survivors; B: mirror image;
  // C: centred bump; D: two clusters at the ends.
  const auto a = stats::describe(0.5, draw_set(1, [&](Rng& r) { return u(r) < 0.03 ? low(r) : 1.0 - tail(r); }));
  const auto b = stats::describe(0.5, draw_set(2, [&](Rng& r) { return u(r) < 0.03 ? high(r) : tail(r); }));
  const auto c = stats::describe(0.5, draw_set(3, [&](Rng& r) { return mid(r); }));
  const auto d = stats::describe(0.5, draw_set(4, [&](Rng& r) { return u(r) < 0.5 ? near0(r) : near1(r); }));
  const bool pass = a.shape == stats::Shape::A && b.shape == stats::Shape::B && c.shape == stats::Shape::C &&
                    d.shape == stats::Shape::D && a.skew.value < -2.0 && a.ekurt.value > 5.0;
  return {pass, fmt::format("classified {}/{}/{}/{}; shape A skew {:.2f} ekurt {:.2f}", to_string(a.shape),
                            to_string(b.shape), to_string(c.shape), to_string(d.shape), a.skew.value, a.ekurt.value)};
}

// ------------------------------------------------------------------ ranking

std::size_t index_of(const metrics::MetricTable& t, Method m) {
  const auto name = attribution::to_string(m);
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    if (t.rows[i].method == name) return i;
  throw StateError("method missing from table: " + name);
}

// 1-based position of `row` when sorting descending on metric `m` in repetition `r`.
std::size_t rank_of(const metrics::MetricTable& t, std::size_t row, std::size_t m, std::size_t r) {
  std::size_t rank = 1;
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    if (i != row && t.rows[i].repetitions[r][m] >= t.rows[row].repetitions[r][m]) ++rank;
  return rank;
}

Outcome ranking(const Context& ctx) {
  pipeline::Pipeline p(ranking_config(), run_options(ctx, ctx.work / "ranking"));
  const auto ev = p.run_all();
  const auto& t = ev.table;
  const std::size_t oracle = index_of(t, Method::oracle);
  const std::size_t random = index_of(t, Method::random_control);
  const std::size_t last = t.rows.size();
  std::size_t passing = 0, random_last = 0, oracle_first = 0;
  std::vector<std::string> oracle_ranks;
  for (std::size_t r = 0; r < t.repetitions; ++r) {
    // AUC S top, F1 and AUC skew-bar need oracle first and random last. On
    // AUC kurt a method that already failed the coarse metrics may score high
    // from a sharp peak near zero, so only the oracle's position is checked.
    bool ok = true, rnd = true, orc = true;
    std::vector<std::size_t> ranks;
    for (std::size_t m = 0; m < metrics::kMetricCount; ++m) {
      const std::size_t ro = rank_of(t, oracle, m, r);
      ranks.push_back(ro);
      orc = orc && ro == 1;
      if (m < 3) rnd = rnd && rank_of(t, random, m, r) == last;
    }
    ok = orc && rnd;
    passing += ok;
    random_last += rnd;
    oracle_first += orc;
    oracle_ranks.push_back(fmt::format("[{}]", fmt::join(ranks, ",")));
  }
  return {passing >= 4,
          fmt::format("{}/{} repetition sets pass ({} methods); random_control last on coarse+skew in {}/{}, "
                      "oracle first on all metrics in {}/{}; oracle ranks per set {}",
                      passing, t.repetitions, last, random_last, t.repetitions, oracle_first, t.repetitions,
                      fmt::join(oracle_ranks, " "))};
}

// -------------------------------------------------------------- calibration

double mid_k_skew(const pipeline::Evaluation& ev, const std::string& method) {
  for (const auto& me : ev.methods) {
    if (me.method != method) continue;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < ev.k_grid.size(); ++i) {
      if (ev.k_grid[i] < 0.35 - 1e-9 || ev.k_grid[i] > 0.75 + 1e-9) continue;
      sum += me.skew[0][i];
      ++n;
    }
    return sum / static_cast<double>(n);
  }
  throw StateError("no distributions for " + method);
}

pipeline::Evaluation calibration_run(const Context& ctx, std::uint64_t seed, model::Calibration cal) {
  auto c = desk_config(seed);
  c.repetitions = 1;
  c.methods = {Method::saliency,  Method::grad_x_input,   Method::integrated_gradients, Method::gradient_shap,
               Method::occlusion, Method::random_control, Method::oracle};
  c.model.train.calibration = cal;
  pipeline::Pipeline p(c, run_options(ctx, ctx.work / "calibration"));
  p.generate();
  p.train();
  p.attribute();
  p.corrupt();
  return p.evaluate();
}

Outcome calibration(const Context& ctx) {
  std::size_t lower = 0;
  std::vector<std::string> parts;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto off = calibration_run(ctx, seed, model::Calibration::off);
    const auto on = calibration_run(ctx, seed, model::Calibration::class0);
    const auto& rows = off.table.rows;
    const auto best = std::max_element(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
      return a.mean[0] < b.mean[0];
    })->method;
    const double s_off = mid_k_skew(off, best), s_on = mid_k_skew(on, best);
    lower += s_on < s_off;
    parts.push_back(fmt::format("seed {} {}: {:.2f} -> {:.2f}", seed, best, s_off, s_on));
  }
  return {lower >= 4, fmt::format("calibrated skew lower in {}/5 seeds ({})", lower, fmt::join(parts, "; "))};
}

// -------------------------------------------------------------- determinism

int shell(const std::string& command) {
  const int rc = std::system(command.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

Outcome determinism(const Context& ctx) {
  const auto a = ctx.work / "determinism" / "a";
  const auto b = ctx.work / "determinism" / "b";
  fs::remove_all(a);
  fs::remove_all(b);
  const std::string base = ctx.cli + " -q -c \"" + ctx.smoke_config + "\"";
  if (shell(base + " -j 1 -o \"" + a.string() + "\" pipeline") != 0 ||
      shell(base + " -j 2 -o \"" + b.string() + "\" pipeline") != 0) {
    return {false, "pipeline run failed"};
  }
  std::size_t compared = 0, differing = 0;
  std::string first_diff;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    const auto ext = entry.path().extension();
    if (entry.path().filename() != "metrics.json" && ext != ".svg") continue;
    const auto rel = fs::relative(entry.path(), a);
    ++compared;
    if (!fs::exists(b / rel) || slurp(entry.path()) != slurp(b / rel)) {
      ++differing;
      if (first_diff.empty()) first_diff = rel.string();
    }
  }
  const bool pass = compared >= 2 && differing == 0;
  return {pass, fmt::format("{} files compared (metrics.json and SVGs) between two CLI runs, {} differ{}", compared,
                            differing, first_diff.empty() ? "" : " (first: " + first_diff + ")")};
}

// ----------------------------------------------------------------- formulas

Outcome formulas(const Context& ctx) {
  const bool f1_exact = metrics::f1_score(1.0, 0.0) == 0.5;
  std::vector<double> xs;
  for (int i = 0; i <= 64; ++i) xs.push_back(i / 64.0);
  const bool auc_exact = metrics::auc_trapezoid(xs, xs) == 0.5;

  // Every run under the work directory, plus a fresh smoke run so there is
  // always at least one.
  pipeline::Pipeline smoke(pipeline::load_config(ctx.smoke_config), run_options(ctx, ctx.work / "formulas"));
  smoke.run_all();
  std::size_t runs = 0, checked = 0, violations = 0;
  for (const auto& entry : fs::recursive_directory_iterator(ctx.work)) {
    if (entry.path().filename() != "metrics.json") continue;
    ++runs;
    const auto j = nlohmann::json::parse(slurp(entry.path()));
    for (const auto& m : j.at("methods"))
      for (const auto& rep : m.at("repetitions"))
        for (const char* key : {"auc_skew_bar", "auc_kurt"}) {
          const double v = rep.at(key).get<double>();
          ++checked;
          violations += !(v >= 0.0 && v <= 0.95);
        }
  }
  return {f1_exact && auc_exact && violations == 0,
          fmt::format("f1(1, 0) {}; trapezoid on y=x {}; skew/kurt AUC bounds [0, 0.95]: {} values from {} runs, "
                      "{} outside",
                      f1_exact ? "== 0.5" : "!= 0.5", auc_exact ? "== 0.5" : "!= 0.5", checked, runs, violations)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  Context ctx;
  std::string work = (fs::temp_directory_path() / "attreval-acceptance").string();
  std::vector<std::string> selected;
  app.add_option("criteria", selected, "criteria to run (default: all)");
  app.add_option("--work", work, "cache directory for pipeline runs");
  app.add_option("--cli", ctx.cli, "path to the attreval executable")->required();
  app.add_option("--smoke-config", ctx.smoke_config, "small pipeline config")->required()->check(CLI::ExistingFile);
  app.add_flag("-v,--verbose", ctx.verbose, "show pipeline progress");
  CLI11_PARSE(app, argc, argv);
  ctx.work = work;
  fs::create_directories(ctx.work);

  const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> criteria = {
      {"gradients", gradients},     {"accuracy", accuracy},   {"ig_completeness", ig_completeness},
      {"shapley", shapley},         {"moments", moments},     {"shapes", shapes},
      {"ranking", ranking},         {"calibration", calibration}, {"determinism", determinism},
      {"formulas", formulas},
  };
  for (const auto& name : selected) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == name; })) {
      std::cerr << "unknown criterion: " << name << "\n";
      return 2;
    }
  }

  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), name) == selected.end()) continue;
    Outcome outcome;
    try {
      outcome = run(ctx);
    } catch (const std::exception& e) {
      outcome = {false, std::string("error: ") + e.what()};
    }
    failures += !outcome.pass;
    std::cout << fmt::format("[{}] {}: {}", outcome.pass ? "PASS" : "FAIL", name, outcome.detail) << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
