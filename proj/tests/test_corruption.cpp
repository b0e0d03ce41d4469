#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "attreval/corruption.hpp"
#include "attreval/errors.hpp"
#include "test_helpers.hpp"

using namespace attreval;
using namespace attreval::corruption;
using attreval::testing::FunctionScorer;

namespace {

Tensor random_tensor(std::size_t m, std::size_t t, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({m, t});
  for (double& v : x.storage()) v = standard_normal(rng);
  return x;
}

struct Fixture {
  std::vector<data::TimeSeriesSample> samples;
  std::vector<attribution::RelevanceMap> maps;
};

Fixture fixture(std::size_t n, std::size_t m, std::size_t t) {
  Fixture f;
  for (std::size_t i = 0; i < n; ++i) {
    data::TimeSeriesSample s;
    s.id = 10 + i;
    s.values = random_tensor(m, t, i);
    s.label = 0;
    attribution::RelevanceMap r;
    r.sample_id = s.id;
    r.scores = random_tensor(m, t, 100 + i);
    f.samples.push_back(std::move(s));
    f.maps.push_back(std::move(r));
  }
  return f;
}

// Class-0 probability in (0, 1) driven by the first feature.
FunctionScorer logistic_scorer(std::size_t m, std::size_t t) {
  return FunctionScorer(m, [t](const double* x) {
    double s = 0.0;
    for (std::size_t i = 0; i < t; ++i) s += x[i];
    return 1.0 / (1.0 + std::exp(-0.3 * s - 2.0));
  });
}

}  // namespace

TEST(Ranking, Examples) {
  Tensor neg({1, 3}, std::vector<double>{-1, -2, 0});
  auto r = rank_positive(neg);
  EXPECT_TRUE(r.descending.empty());
  EXPECT_TRUE(r.ascending.empty());
  Tensor abc({1, 3}, std::vector<double>{3, 1, 2});
  r = rank_positive(abc);
  EXPECT_EQ(r.descending, (std::vector<std::size_t>{0, 2, 1}));
  EXPECT_EQ(r.ascending, (std::vector<std::size_t>{1, 2, 0}));
}

TEST(Ranking, TiesKeepIndexOrderAndAscendingReversesDescending) {
  Tensor tied({2, 3}, std::vector<double>{1, 2, 1, -1, 2, 1});
  auto r = rank_positive(tied);
  EXPECT_EQ(r.descending, (std::vector<std::size_t>{1, 4, 0, 2, 5}));
  EXPECT_EQ(r.ascending, (std::vector<std::size_t>{0, 2, 5, 1, 4}));
  Tensor x = random_tensor(3, 50, 7);
  r = rank_positive(x);
  std::vector<std::size_t> rev(r.descending.rbegin(), r.descending.rend());
  EXPECT_EQ(rev, r.ascending);
  for (std::size_t i = 1; i < r.descending.size(); ++i) EXPECT_GE(x[r.descending[i - 1]], x[r.descending[i]]);
}

TEST(Corrupt, CountAndUntouchedValues) {
  EXPECT_EQ(corrupted_count(200, 0.15), 30u);
  EXPECT_EQ(corrupted_count(10, 0.05), 1u);  // 0.5 rounds up
  EXPECT_EQ(corrupted_count(10, 0.04), 0u);
  EXPECT_EQ(corrupted_count(0, 0.95), 0u);
  Tensor x = random_tensor(4, 100, 1);
  std::vector<std::size_t> ranked(200);
  for (std::size_t i = 0; i < 200; ++i) ranked[i] = 2 * i;
  Rng rng(3);
  bool degenerate = true;
  Tensor y = corrupt(x, ranked, 0.15, rng, &degenerate);
  EXPECT_FALSE(degenerate);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool selected = i % 2 == 0 && i / 2 < 30;
    if (selected) {
      changed += y[i] != x[i];
    } else {
      EXPECT_EQ(y[i], x[i]);
    }
  }
  EXPECT_EQ(changed, 30u);
}

TEST(Corrupt, DegenerateCaseReturnsInputUnchanged) {
  Tensor x = random_tensor(1, 10, 1);
  std::vector<std::size_t> ranked{1, 2, 3};
  Rng rng(1);
  bool degenerate = false;
  EXPECT_EQ(corrupt(x, ranked, 0.1, rng, &degenerate), x);
  EXPECT_TRUE(degenerate);
  EXPECT_THROW(corrupt(x, ranked, 0.0, rng), ParameterError);
  EXPECT_THROW(corrupt(x, ranked, 1.5, rng), ParameterError);
}

TEST(Corrupt, ReplacementsAreStandardNormal) {
  Tensor x({1, 20}, 5.0);
  std::vector<std::size_t> ranked(20);
  for (std::size_t i = 0; i < 20; ++i) ranked[i] = i;
  Rng rng(4);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (int rep = 0; rep < 10000; ++rep) {
    Tensor y = corrupt(x, ranked, 0.5, rng);
    for (std::size_t i = 0; i < 10; ++i) {
      sum += y[i];
      sq += y[i] * y[i];
      ++n;
    }
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  const double se = 1.0 / std::sqrt(static_cast<double>(n));
  EXPECT_LT(std::abs(mean), 3 * se);
  EXPECT_LT(std::abs(sd - 1.0), 3 * se / std::sqrt(2.0) * 1.5);
}

TEST(Corrupt, SameSetGivesSameValuesWhateverTheOrder) {
  Tensor x = random_tensor(2, 10, 2);
  std::vector<std::size_t> a{3, 7, 1, 12};
  std::vector<std::size_t> b{12, 1, 7, 3};
  Rng r1(9), r2(9);
  EXPECT_EQ(corrupt(x, a, 1.0, r1), corrupt(x, b, 1.0, r2));
}

TEST(ScoreDrop, Formula) {
  EXPECT_EQ(*normalized_score_drop(0.9, 0.9), 0.0);
  EXPECT_EQ(*normalized_score_drop(0.8, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(*normalized_score_drop(0.8, 0.9), -0.125);
  EXPECT_FALSE(normalized_score_drop(1e-6, 0.0).has_value());
  EXPECT_FALSE(normalized_score_drop(0.0, 0.0).has_value());
}

TEST(KGrid, DefaultsParsingAndValidation) {
  auto g = default_k_grid();
  ASSERT_EQ(g.size(), 10u);
  EXPECT_DOUBLE_EQ(g.front(), 0.05);
  EXPECT_DOUBLE_EQ(g.back(), 0.95);
  EXPECT_EQ(default_k_grid(true).back(), 1.0);
  EXPECT_EQ(parse_k_grid("0.1, 0.5,1"), (std::vector<double>{0.1, 0.5, 1.0}));
  EXPECT_THROW(parse_k_grid("0.1,x"), ConfigError);
  CorruptionPlan p;
  p.k_grid = {0.5, 0.2};
  EXPECT_THROW(p.validate(), ConfigError);
  p.k_grid = {0.0, 0.2};
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(RunCorruption, RecordsCurvesAndInvariants) {
  Fixture f = fixture(12, 2, 30);
  auto scorer = logistic_scorer(2, 30);
  CorruptionPlan plan;
  plan.k_grid = default_k_grid(true);
  auto result = run_corruption(scorer, f.samples, f.maps, "test", plan);
  ASSERT_EQ(result.records.size(), 12u * 2u * 11u);
  EXPECT_EQ(result.diagnostics.low_confidence, 0u);

  for (std::size_t s = 0; s < 12; ++s) {
    const std::size_t positive = rank_positive(f.maps[s].scores).descending.size();
    for (std::size_t j = 0; j < 11; ++j) {
      const auto& top = result.records[s * 22 + j];
      const auto& bot = result.records[s * 22 + 11 + j];
      EXPECT_EQ(top.sample_id, f.samples[s].id);
      EXPECT_EQ(top.scheme, Scheme::top);
      EXPECT_EQ(bot.scheme, Scheme::bot);
      EXPECT_EQ(top.corrupted, corrupted_count(positive, top.k));
      if (top.corrupted == 0) {
        EXPECT_EQ(top.drop, 0.0);
      }
      EXPECT_DOUBLE_EQ(top.drop, (top.s_orig - top.s_corr) / top.s_orig);
    }
    // identical corrupted set at k = 1
    EXPECT_EQ(result.records[s * 22 + 10].s_corr, result.records[s * 22 + 21].s_corr);
  }
  ASSERT_EQ(result.top_curve.size(), 12u);
  EXPECT_EQ(result.top_curve[0].n_ratio, 0.0);
  EXPECT_EQ(result.top_curve[0].mean_drop, 0.0);
  for (std::size_t j = 1; j < result.top_curve.size(); ++j) {
    EXPECT_GE(result.top_curve[j].n_ratio, result.top_curve[j - 1].n_ratio);
    EXPECT_LE(result.top_curve[j].n_ratio, 1.0);
  }
  // N~ at k = 1 equals the mean positive fraction
  double positive_fraction = 0.0;
  for (const auto& m : f.maps) positive_fraction += rank_positive(m.scores).descending.size() / 60.0 / 12.0;
  EXPECT_NEAR(result.top_curve.back().n_ratio, positive_fraction, 1e-12);
}

TEST(RunCorruption, ParallelRunMatchesSerial) {
  Fixture f = fixture(9, 2, 20);
  auto scorer = logistic_scorer(2, 20);
  CorruptionOptions serial, parallel;
  parallel.jobs = 3;
  auto a = run_corruption(scorer, f.samples, f.maps, "m", {}, serial);
  auto b = run_corruption(scorer, f.samples, f.maps, "m", {}, parallel);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].sample_id, b.records[i].sample_id);
    EXPECT_EQ(a.records[i].drop, b.records[i].drop);
  }
}

TEST(RunCorruption, ConstantScorerGivesZeroDrops) {
  Fixture f = fixture(5, 1, 20);
  FunctionScorer uniform(1, [](const double*) { return 0.5; });
  auto result = run_corruption(uniform, f.samples, f.maps, "m", {});
  for (const auto& r : result.records) EXPECT_EQ(r.drop, 0.0);
}

TEST(RunCorruption, ExclusionsAreTallied) {
  Fixture f = fixture(6, 1, 10);
  FunctionScorer scorer(1, [](const double* x) { return x[0] > 0 ? 0.9 : 0.1; });
  CorruptionOptions o;
  o.restrict_correct = true;  // labels are all 0
  auto result = run_corruption(scorer, f.samples, f.maps, "m", {}, o);
  std::size_t wrong = 0;
  for (const auto& s : f.samples) wrong += s.values[0] <= 0;
  EXPECT_EQ(result.diagnostics.misclassified, wrong);
  EXPECT_EQ(result.records.size(), (6 - wrong) * 20u);

  // a scorer returning all-zero rows trips the s_orig guard
  class ZeroScorer : public scorer::Scorer {
   public:
    scorer::Capabilities capabilities() const override { return {2, 1, 0}; }
    Tensor score_batch(const Tensor& b) const override { return Tensor({b.dim(0), 2}, 0.0); }
  } zero;
  auto excluded = run_corruption(zero, f.samples, f.maps, "m", {});
  EXPECT_EQ(excluded.diagnostics.low_confidence, 6u);
  EXPECT_TRUE(excluded.records.empty());
}

TEST(RunCorruption, MismatchedMapsAreRejected) {
  Fixture f = fixture(3, 1, 10);
  auto scorer = logistic_scorer(1, 10);
  f.maps[1].sample_id = 999;
  EXPECT_THROW(run_corruption(scorer, f.samples, f.maps, "m", {}), ConfigError);
  f.maps.pop_back();
  EXPECT_THROW(run_corruption(scorer, f.samples, f.maps, "m", {}), ConfigError);
}

TEST(RunCorruption, ScorerFailureNamesTheSample) {
  Fixture f = fixture(2, 1, 10);
  FunctionScorer failing(1, [](const double*) -> double { throw ScorerError("boom"); });
  try {
    run_corruption(failing, f.samples, f.maps, "m", {});
    FAIL();
  } catch (const ScorerError& e) {
    EXPECT_NE(std::string(e.what()).find("sample 10"), std::string::npos) << e.what();
  }
}

TEST(RecordsCsv, RoundTripIsExact) {
  Fixture f = fixture(4, 2, 15);
  auto scorer = logistic_scorer(2, 15);
  auto result = run_corruption(scorer, f.samples, f.maps, "integrated_gradients", {});
  const auto path = std::filesystem::temp_directory_path() / "attreval_records.csv";
  save_records_csv(path.string(), result.records);
  auto back = load_records_csv(path.string());
  ASSERT_EQ(back.size(), result.records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].sample_id, result.records[i].sample_id);
    EXPECT_EQ(back[i].method, "integrated_gradients");
    EXPECT_EQ(back[i].scheme, result.records[i].scheme);
    EXPECT_EQ(back[i].k, result.records[i].k);
    EXPECT_EQ(back[i].corrupted, result.records[i].corrupted);
    EXPECT_EQ(back[i].s_orig, result.records[i].s_orig);
    EXPECT_EQ(back[i].s_corr, result.records[i].s_corr);
    EXPECT_EQ(back[i].drop, result.records[i].drop);
  }
  auto curve = curve_from_records(back, Scheme::top, default_k_grid(), 30);
  for (std::size_t j = 0; j < curve.size(); ++j) EXPECT_EQ(curve[j].mean_drop, result.top_curve[j].mean_drop);
  std::filesystem::remove(path);
}
