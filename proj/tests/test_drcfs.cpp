#include "drcfs/dgp.hpp"
#include "drcfs/drcfs.hpp"
#include "drcfs/oracle.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

using namespace drcfs;

namespace {

Dataset coin_dataset(Index n, std::uint64_t seed) {
  auto [x, y] = oracle::sample(oracle::identity_fixture(), n, seed);
  return {x, y, {"X1", "X2"}};
}

// Wraps a fixed function of the conditioning columns as both nuisances.
NuisanceFitter oracle_fitter(std::function<Vector(const Matrix&)> g, Index dim) {
  return [g, dim](const Matrix&, const Vector&, int) {
    FunctionModel f{g, dim};
    return NuisancePair{f, f, {}};
  };
}

}  // namespace

TEST(Folds, SizesAndDeterminism) {
  auto a = make_folds(10, 5, 1);
  for (auto s : a.fold_sizes()) EXPECT_EQ(s, 2u);
  auto b = make_folds(7, 3, 2);
  auto sizes = b.fold_sizes();
  std::sort(sizes.begin(), sizes.end());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{2, 2, 3}));
  EXPECT_EQ(make_folds(100, 5, 9).assignment, make_folds(100, 5, 9).assignment);
  EXPECT_NE(make_folds(100, 5, 9).assignment, make_folds(100, 5, 10).assignment);
  EXPECT_THROW(make_folds(3, 4, 0), ConfigError);
  EXPECT_THROW(make_folds(10, 1, 0), ConfigError);
}

TEST(Folds, RandomPlansPartitionAndBalance) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    const Index n = 2 + static_cast<Index>(rng() % 200);
    const int k = 2 + static_cast<int>(rng() % std::min<Index>(n - 1, 10));
    auto plan = make_folds(n, k, rng());
    auto sizes = plan.fold_sizes();
    EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1u);
    std::size_t total = 0;
    for (int l = 0; l < k; ++l) total += plan.evaluation_indices(l).size();
    EXPECT_EQ(total, static_cast<std::size_t>(n));
  }
}

TEST(ScoreTheta, ZeroOutcomeGivesZeroScores) {
  Dataset d = coin_dataset(200, 1);
  d.outcome.setZero();
  auto plan = make_folds(200, 5, 1);
  LearnerSpec spec;
  auto s = score_theta(d.features, d.outcome, plan, all_columns(2),
                       learner_fitter(spec, Moment::FullConditioning, 1, all_columns(2)), ScoreConvention::Eq3);
  EXPECT_EQ(s.values.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(s.theta, 0.0);
  EXPECT_EQ(s.variance, 0.0);
}

TEST(ScoreTheta, OracleNuisancesHitTheEnumeratedMoment) {
  Dataset d = coin_dataset(20000, 2);
  auto plan = make_folds(d.rows(), 5, 2);
  auto g = [](const Matrix& x) { return Vector(x.col(0)); };
  auto eq3 = score_theta(d.features, d.outcome, plan, all_columns(2), oracle_fitter(g, 2), ScoreConvention::Eq3);
  auto lit = score_theta(d.features, d.outcome, plan, all_columns(2), oracle_fitter(g, 2),
                         ScoreConvention::PaperLiteral);
  // E[g0^2] = P(X1 = 1) = 0.5, enumerated over the four cells.
  EXPECT_NEAR(eq3.theta, 0.5, 0.015);
  EXPECT_NEAR(lit.theta, -0.5, 0.015);
}

TEST(ScoreTheta, CrossFitHygiene) {
  Dataset d = coin_dataset(103, 3);
  auto plan = make_folds(d.rows(), 4, 3);
  std::vector<int> scored(103, 0);
  LearnerSpec spec;
  auto base = learner_fitter(spec, Moment::FullConditioning, 3, all_columns(2));
  std::vector<std::size_t> trained_sizes;
  NuisanceFitter fitter = [&](const Matrix& x, const Vector& y, int fold) {
    trained_sizes.push_back(static_cast<std::size_t>(x.rows()));
    return base(x, y, fold);
  };
  score_theta(d.features, d.outcome, plan, all_columns(2), fitter, ScoreConvention::Eq3,
              [&](int fold, const std::vector<Index>& train, const std::vector<Index>& eval) {
                std::set<Index> t(train.begin(), train.end());
                for (Index i : eval) {
                  EXPECT_EQ(t.count(i), 0u) << "row " << i << " scored by a model that saw it";
                  EXPECT_EQ(plan.assignment[static_cast<std::size_t>(i)], fold);
                  ++scored[static_cast<std::size_t>(i)];
                }
                EXPECT_EQ(train.size() + eval.size(), 103u);
              });
  for (int c : scored) EXPECT_EQ(c, 1);
  for (int l = 0; l < 4; ++l) EXPECT_EQ(trained_sizes[static_cast<std::size_t>(l)], plan.training_indices(l).size());
}

TEST(ScoreTheta, FoldFailureCarriesFoldId) {
  Dataset d = coin_dataset(50, 4);
  auto plan = make_folds(50, 5, 4);
  NuisanceFitter bad = [](const Matrix&, const Vector&, int fold) -> NuisancePair {
    if (fold == 2) throw EstimationError("boom");
    FunctionModel f{[](const Matrix& x) { return Vector(Vector::Zero(x.rows())); }, 2};
    return {f, f, {}};
  };
  try {
    score_theta(d.features, d.outcome, plan, all_columns(2), bad, ScoreConvention::Eq3);
    FAIL();
  } catch (const EstimationError& e) {
    EXPECT_NE(std::string(e.what()).find("fold 2"), std::string::npos);
  }
}

TEST(EstimateChi, IdenticalScoresAndMismatches) {
  ScoreSamples s;
  s.values = Vector::LinSpaced(10, 0, 1);
  s.fold.assign(10, 0);
  s.theta = 0.5;
  auto c = estimate_chi(s, s);
  EXPECT_EQ(c.chi, 0.0);
  EXPECT_EQ(c.differences.cwiseAbs().maxCoeff(), 0.0);
  ScoreSamples other = s;
  other.convention = ScoreConvention::PaperLiteral;
  EXPECT_THROW(estimate_chi(s, other), ConfigError);
  other = s;
  other.fold[3] = 1;
  EXPECT_THROW(estimate_chi(s, other), ConfigError);
}

TEST(EstimateChi, DiscreteFixture) {
  Dataset d = coin_dataset(100000, 5);
  DrcfsConfig cfg;
  cfg.seed = 5;
  auto r = run_drcfs(d, cfg);
  const double chi1 = oracle::exact_chi(oracle::identity_fixture(), 0);
  EXPECT_NEAR(chi1, 0.25, 1e-15);
  EXPECT_NEAR(r.results[0].chi, chi1, 0.02);
  // chi_2 = 0; bound by three standard errors of the mean difference.
  auto plan = make_folds(d.rows(), 5, derive_seed(5, 0x666f6c6473ULL));
  auto f0 = learner_fitter(cfg.learner, Moment::FullConditioning, 5, all_columns(2));
  auto f2 = learner_fitter(cfg.learner, Moment::DropColumn, 5, drop_column(2, 1));
  auto s0 = score_theta(d.features, d.outcome, plan, all_columns(2), f0, ScoreConvention::Eq3);
  auto s2 = score_theta(d.features, d.outcome, plan, drop_column(2, 1), f2, ScoreConvention::Eq3);
  auto c = estimate_chi(s0, s2);
  const double se = std::sqrt((c.differences.array() - c.differences.mean()).square().sum() / (d.rows() - 1)) /
                    std::sqrt(static_cast<double>(d.rows()));
  EXPECT_TRUE(std::abs(c.chi) <= 3.0 * se || negligible_differences(c.differences, s0.values, s2.values))
      << c.chi << " se " << se;
  EXPECT_NEAR(c.chi, r.results[1].chi, 1e-12);
}

TEST(PairedTTest, Examples) {
  auto z = paired_t_test(Vector::Zero(20));
  EXPECT_EQ(z.p, 1.0);
  EXPECT_FALSE(z.degenerate);

  Vector alt(4);
  alt << 1, -1, 1, -1;
  auto a = paired_t_test(alt);
  EXPECT_EQ(a.t, 0.0);
  EXPECT_NEAR(a.p, 1.0, 1e-12);

  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd(1.0, 1.0);
  Vector d(400);
  for (auto& v : d) v = nd(rng);
  EXPECT_LT(paired_t_test(d).p, 1e-10);

  auto c = paired_t_test(Vector::Constant(5, 0.3));
  EXPECT_TRUE(c.degenerate);
  EXPECT_EQ(c.p, 0.0);
  EXPECT_THROW(paired_t_test(Vector::Zero(1)), EstimationError);
}

TEST(PairedTTest, MatchesReferenceValues) {
  // Reference values from an independent statistics package.
  Vector a(8);
  a << 0.5, 1.2, -0.3, 0.8, 1.1, 0.05, -0.4, 0.9;
  auto r = paired_t_test(a);
  EXPECT_NEAR(r.t, 2.1718162902070954, 1e-12);
  EXPECT_NEAR(r.p, 0.0664386269086016, 1e-12);
  Vector b(6);
  b << -2.1, 0.3, -1.7, -0.9, -1.2, 0.4;
  r = paired_t_test(b);
  EXPECT_NEAR(r.t, -2.0632321614740934, 1e-12);
  EXPECT_NEAR(r.p, 0.0940456809626937, 1e-12);
}

TEST(PairedTTest, SignFlipOfBothScoresLeavesTestInvariant) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.1, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    Vector s0(300), sj(300);
    for (Index i = 0; i < 300; ++i) {
      s0(i) = nd(rng);
      sj(i) = nd(rng);
    }
    auto r = paired_t_test(s0 - sj);
    auto f = paired_t_test((-s0) - (-sj));
    EXPECT_EQ(r.t * r.t, f.t * f.t);
    EXPECT_EQ(r.p, f.p);
  }
}

TEST(PairedTTest, RoundingLevelDifferencesAreNegligible) {
  Vector s0 = Vector::LinSpaced(100, -1, 1);
  Vector sj = s0;
  sj(3) += 1e-13;
  EXPECT_TRUE(negligible_differences(s0 - sj, s0, sj));
  sj(4) += 1e-6;
  EXPECT_FALSE(negligible_differences(s0 - sj, s0, sj));
  EXPECT_TRUE(negligible_differences(Vector::Zero(5), Vector::Zero(5), Vector::Zero(5)));
}

TEST(BY, WorkedExample) {
  auto r = by_adjust({0.001, 0.02, 0.9}, 0.05);
  EXPECT_EQ(r.reject, (std::vector<bool>{true, false, false}));
  const double c3 = 11.0 / 6.0;
  EXPECT_NEAR(r.adjusted[0], 3 * c3 * 0.001, 1e-15);
  EXPECT_NEAR(r.adjusted[1], 3 * c3 * 0.02 / 2, 1e-15);
  EXPECT_EQ(r.adjusted[2], 1.0);
}

TEST(BY, EdgeCases) {
  auto ones = by_adjust({1, 1, 1, 1}, 0.05);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_FALSE(ones.reject[i]);
    EXPECT_EQ(ones.adjusted[i], 1.0);
  }
  EXPECT_TRUE(by_adjust({0.05}, 0.05).reject[0]);
  EXPECT_FALSE(by_adjust({0.0500001}, 0.05).reject[0]);
  EXPECT_THROW(by_adjust({1.2}, 0.05), ConfigError);
}

TEST(BY, AgreesWithThresholdRuleOnRandomInputs) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 2000; ++rep) {
    const std::size_t m = 1 + rng() % 30;
    std::vector<double> p(m);
    for (auto& v : p) v = rep % 2 ? std::pow(u(rng), 6) : u(rng);
    const double q = 0.01 + 0.2 * u(rng);
    auto r = by_adjust(p, q);

    // Oracle: reject the k* smallest, k* = max{k : p_(k) <= q k / (m c(m))}.
    double cm = 0;
    for (std::size_t i = 1; i <= m; ++i) cm += 1.0 / i;
    std::vector<double> s = p;
    std::sort(s.begin(), s.end());
    std::size_t kstar = 0;
    for (std::size_t k = 1; k <= m; ++k)
      if (s[k - 1] <= q * k / (m * cm)) kstar = k;
    const double cut = kstar ? s[kstar - 1] : -1.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (std::abs(r.adjusted[i] - q) > 1e-12) {
        EXPECT_EQ(r.reject[i], p[i] <= cut) << rep;
      }
      EXPECT_GE(r.adjusted[i], p[i]);
      EXPECT_LE(r.adjusted[i], 1.0);
      if (r.reject[i]) {
        EXPECT_LE(p[i], q);  // a subset of the unadjusted rejections
      }
    }
  }
}

TEST(RunDrcfs, DiscreteFixtureSelection) {
  int good = 0;
  for (std::uint64_t rep = 0; rep < 100; ++rep) {
    DrcfsConfig cfg;
    cfg.seed = rep;
    auto r = run_drcfs(coin_dataset(5000, 1000 + rep), cfg);
    good += r.results[0].selected && !r.results[1].selected;
  }
  EXPECT_GE(good, 95);
}

TEST(RunDrcfs, NullCalibration) {
  std::vector<int> freq(10, 0);
  const int reps = 60;
  for (int rep = 0; rep < reps; ++rep) {
    DgpConfig c;
    c.m = 10;
    c.n = 2000;
    c.p_c = 0.0;
    c.seed = 5000 + static_cast<std::uint64_t>(rep);
    auto ds = simulate_dataset(c);
    DrcfsConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(rep);
    auto r = run_drcfs({ds.features, ds.outcome, ds.column_names}, cfg);
    for (std::size_t j = 0; j < 10; ++j) freq[j] += r.results[j].selected;
  }
  for (int f : freq) EXPECT_LE(f, static_cast<int>(1.5 * 0.05 * reps));
}

TEST(RunDrcfs, ChiIsNonnegativeInExpectation) {
  // One fixed population; replicates are bootstrap resamples of it.
  DgpConfig c;
  c.m = 5;
  c.n = 4000;
  c.p_c = 0.5;
  c.seed = 77;
  auto ds = simulate_dataset(c);
  const int reps = 30;
  std::vector<std::vector<double>> chi(static_cast<std::size_t>(ds.features.cols()));
  for (int rep = 0; rep < reps; ++rep) {
    std::mt19937_64 br(900 + static_cast<std::uint64_t>(rep));
    std::uniform_int_distribution<Index> pick(0, ds.features.rows() - 1);
    std::vector<Index> rows(1000);
    for (auto& r : rows) r = pick(br);
    DrcfsConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(rep);
    auto r = run_drcfs({select_rows(ds.features, rows), select_rows(ds.outcome, rows), ds.column_names}, cfg);
    for (std::size_t j = 0; j < r.results.size(); ++j) chi[j].push_back(r.results[j].chi);
  }
  for (const auto& v : chi) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    EXPECT_GE(mean, -3.0 * se - 1e-12);
  }
}

TEST(RunDrcfs, PermutationEquivariance) {
  DgpConfig c;
  c.m = 6;
  c.n = 1500;
  c.p_c = 0.4;
  c.seed = 31;
  auto ds = simulate_dataset(c);
  Dataset d{ds.features, ds.outcome, ds.column_names};
  const std::vector<Index> perm{3, 0, 5, 1, 4, 2};
  Dataset p{select_columns(d.features, perm), d.outcome, {}};
  for (Index k : perm) p.names.push_back(d.names[static_cast<std::size_t>(k)]);
  DrcfsConfig cfg;
  cfg.seed = 2;
  auto a = run_drcfs(d, cfg), b = run_drcfs(p, cfg);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const auto& ra = a.results[static_cast<std::size_t>(perm[i])];
    const auto& rb = b.results[i];
    EXPECT_EQ(ra.name, rb.name);
    EXPECT_NEAR(ra.chi, rb.chi, 1e-9);
    EXPECT_NEAR(ra.t, rb.t, 1e-6);
    EXPECT_EQ(ra.selected, rb.selected);
  }
}

TEST(RunDrcfs, ThreadCountDoesNotChangeResults) {
  DgpConfig c;
  c.m = 6;
  c.n = 800;
  c.seed = 32;
  auto ds = simulate_dataset(c);
  Dataset d{ds.features, ds.outcome, ds.column_names};
  DrcfsConfig one;
  one.seed = 4;
  DrcfsConfig many = one;
  many.threads = 4;
  EXPECT_EQ(report_json(run_drcfs(d, one), false)["features"], report_json(run_drcfs(d, many), false)["features"]);
}

TEST(RunDrcfs, ReportInvariantsAndJson) {
  DgpConfig c;
  c.m = 5;
  c.n = 600;
  c.seed = 33;
  auto ds = simulate_dataset(c);
  DrcfsConfig cfg;
  auto r = run_drcfs({ds.features, ds.outcome, ds.column_names}, cfg);
  ASSERT_EQ(r.results.size(), 5u);
  for (const auto& f : r.results) {
    EXPECT_GE(f.p_adj, f.p_raw);
    EXPECT_EQ(f.selected, f.p_adj <= cfg.q);
    EXPECT_NEAR(f.chi, f.theta0 - f.thetaj, 1e-12);
    EXPECT_GE(f.var0, 0.0);
  }
  auto j = report_json(r, false);
  EXPECT_EQ(j["run"]["wall_ms"], 0.0);
  EXPECT_EQ(j["run"]["k"], 5);
  EXPECT_EQ(j["run"]["convention"], "eq3");
  EXPECT_EQ(j["features"].size(), 5u);
  for (const char* key : {"name", "theta0", "thetaj", "chi", "t", "p_raw", "p_adj", "selected"})
    EXPECT_TRUE(j["features"][0].contains(key)) << key;
}

TEST(RunDrcfs, InputValidation) {
  Dataset one{Matrix::Zero(10, 1), Vector::Zero(10), {"X1"}};
  EXPECT_THROW(run_drcfs(one, DrcfsConfig{}), ConfigError);
  Dataset tiny = coin_dataset(3, 1);
  EXPECT_THROW(run_drcfs(tiny, DrcfsConfig{}), ConfigError);
  DrcfsConfig bad;
  bad.q = 0.0;
  EXPECT_THROW(run_drcfs(coin_dataset(50, 1), bad), ConfigError);
}

TEST(RunDrcfs, ZeroOutcomeIsNeverSelected) {
  Dataset d = coin_dataset(500, 9);
  d.outcome.setZero();
  auto r = run_drcfs(d, DrcfsConfig{});
  for (const auto& f : r.results) {
    EXPECT_EQ(f.p_raw, 1.0);
    EXPECT_FALSE(f.selected);
  }
}
