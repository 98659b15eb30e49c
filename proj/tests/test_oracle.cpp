#include "drcfs/oracle.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <map>

using namespace drcfs;
using namespace drcfs::oracle;

namespace {

// Plug-in chi from a large sample: empirical cell means with and without
// column c, averaged over the sample. Independent of the enumeration code.
double monte_carlo_chi(const Matrix& x, const Vector& y, Index c) {
  std::map<std::vector<double>, std::pair<double, double>> full, drop;
  auto key = [&](Index i, Index skip) {
    std::vector<double> k;
    for (Index j = 0; j < x.cols(); ++j)
      if (j != skip) k.push_back(x(i, j));
    return k;
  };
  for (Index i = 0; i < x.rows(); ++i) {
    auto& f = full[key(i, -1)];
    f.first += y(i);
    f.second += 1;
    auto& d = drop[key(i, c)];
    d.first += y(i);
    d.second += 1;
  }
  double chi = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    const auto& f = full[key(i, -1)];
    const auto& d = drop[key(i, c)];
    const double diff = f.first / f.second - d.first / d.second;
    chi += diff * diff;
  }
  return chi / static_cast<double>(x.rows());
}

}  // namespace

TEST(Oracle, FixtureValues) {
  // Y = X1: g0 = X1, the drop-X1 mean is 1/2, so chi_1 = Var(X1) = 1/4.
  EXPECT_NEAR(exact_chi(identity_fixture(), 0), 0.25, 1e-15);
  EXPECT_NEAR(exact_chi(identity_fixture(), 1), 0.0, 1e-15);
  // XOR: each single coin leaves E[Y | other] = 1/2.
  EXPECT_NEAR(exact_chi(xor_fixture(), 0), 0.25, 1e-15);
  EXPECT_NEAR(exact_chi(xor_fixture(), 1), 0.25, 1e-15);
  EXPECT_NEAR(exact_chi(independent_fixture(), 0), 0.0, 1e-15);
  EXPECT_NEAR(exact_chi(independent_fixture(), 1), 0.0, 1e-15);
}

TEST(Oracle, MomentFormMatchesSquaredDifferenceForm) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto s = random_binary_scm(2 + seed % 4, seed);
    auto chi = chi_from_moments(s);
    const auto obs = s.observed();
    for (std::size_t c = 0; c < obs.size(); ++c) EXPECT_NEAR(chi[c], exact_chi(s, obs[c]), 1e-12) << seed;
  }
}

TEST(Oracle, EnumerationAgreesWithMonteCarlo) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto s = random_binary_scm(3, 100 + seed);
    auto [x, y] = sample(s, 200000, seed);
    const auto obs = s.observed();
    for (std::size_t c = 0; c < obs.size(); ++c)
      EXPECT_NEAR(monte_carlo_chi(x, y, static_cast<Index>(c)), exact_chi(s, obs[c]), 0.03) << seed << " " << c;
  }
}

TEST(Oracle, PositiveChiExactlyOnParents) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto s = random_binary_scm(2 + seed % 4, 500 + seed, seed % 2 == 0);
    for (auto j : s.observed()) {
      const bool parent =
          std::find(s.outcome.parents.begin(), s.outcome.parents.end(), j) != s.outcome.parents.end();
      const double chi = exact_chi(s, j);
      EXPECT_GE(chi, -1e-15);
      if (parent) {
        EXPECT_GT(chi, 1e-9) << seed << " node " << j;
      } else {
        EXPECT_LT(chi, 1e-12) << seed << " node " << j;
      }
    }
  }
}

TEST(Oracle, InterventionalAndObservationalEffectsCoincide) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto s = random_binary_scm(2 + seed % 3, 900 + seed);
    const auto obs = s.observed();
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> ctx(obs.size());
    for (auto& v : ctx) v = rng() % 2;
    for (auto j : obs) {
      auto r = exact_acde(s, j, 1, 0, ctx);
      EXPECT_NEAR(r.interventional, r.observational, 1e-12) << seed;
    }
  }
}

TEST(Oracle, AcdeExamples) {
  EXPECT_NEAR(exact_acde(identity_fixture(), 0, 1, 0, {0, 0}).interventional, 1.0, 1e-15);
  EXPECT_NEAR(exact_acde(identity_fixture(), 1, 1, 0, {0, 0}).interventional, 0.0, 1e-15);
  // XOR with X2 held at 1: flipping X1 from 0 to 1 takes Y from 1 to 0.
  EXPECT_NEAR(exact_acde(xor_fixture(), 0, 1, 0, {0, 1}).interventional, -1.0, 1e-15);
  EXPECT_NEAR(exact_acde(xor_fixture(), 0, 1, 0, {0, 0}).interventional, 1.0, 1e-15);
  EXPECT_THROW(exact_acde(identity_fixture(), 0, 1, 0, {0}), ConfigError);
  EXPECT_THROW(exact_acde(identity_fixture(), 0, 2, 0, {0, 0}), ConfigError);
}

TEST(Oracle, ZeroProbabilityContextIsAnError) {
  auto s = identity_fixture();
  s.nodes[1].parents = {0};
  s.nodes[1].cpt = {{1.0, 0.0}, {0.0, 1.0}};  // X2 = X1
  EXPECT_THROW(exact_acde(s, 0, 1, 0, {0, 0}), EstimationError);
}

TEST(Oracle, CounterexamplePairsShareSecondMoments) {
  const Index n = 100000;
  auto [a, b] = counterexample_fixtures(n, 11);
  const double tol = 4.0 / std::sqrt(static_cast<double>(n));
  Matrix ca = sample_covariance(a.first), ca2 = sample_covariance(a.second);
  Matrix expect_a(2, 2), expect_b(2, 2);
  expect_a << 1, 1, 1, 1;
  expect_b << 1, 1, 1, 2;
  EXPECT_LE((ca - expect_a).cwiseAbs().maxCoeff(), tol);
  EXPECT_LE((ca2 - expect_a).cwiseAbs().maxCoeff(), tol);
  EXPECT_LE((sample_covariance(b.first) - expect_b).cwiseAbs().maxCoeff(), 2 * tol);
  EXPECT_LE((sample_covariance(b.second) - expect_b).cwiseAbs().maxCoeff(), 2 * tol);
  EXPECT_FALSE(a.first_has_parent);
  EXPECT_TRUE(a.second_has_parent);
  EXPECT_TRUE(b.first_has_parent);
  EXPECT_FALSE(b.second_has_parent);
}

TEST(Oracle, SamplingIsDeterministic) {
  auto s = random_binary_scm(4, 3);
  auto [x1, y1] = sample(s, 500, 8);
  auto [x2, y2] = sample(s, 500, 8);
  EXPECT_EQ(x1, x2);
  EXPECT_EQ(y1, y2);
  auto [p, q] = counterexample_fixtures(50, 4);
  auto [p2, q2] = counterexample_fixtures(50, 4);
  EXPECT_EQ(p.first, p2.first);
  EXPECT_EQ(q.second, q2.second);
}

TEST(Oracle, JsonRoundTrip) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = random_binary_scm(3, seed);
    auto back = scm_from_json(to_json(s));
    EXPECT_EQ(to_json(back), to_json(s));
    for (auto j : s.observed()) EXPECT_EQ(exact_chi(back, j), exact_chi(s, j));
  }
  EXPECT_THROW(scm_from_json(nlohmann::json::parse(R"({"nodes": 3})")), ConfigError);
}

TEST(Oracle, ValidationRejectsBadModels) {
  auto s = identity_fixture();
  s.nodes[0].cpt = {{0.5, 0.6}};
  EXPECT_THROW(s.validate(), ConfigError);
  s = identity_fixture();
  s.nodes[0].parents = {1};
  EXPECT_THROW(s.validate(), ConfigError);
  s = identity_fixture();
  s.nodes[0].hidden = true;
  EXPECT_THROW(s.validate(), ConfigError);
  s = identity_fixture();
  s.outcome.table = {0.0};
  EXPECT_THROW(s.validate(), ConfigError);
  s = identity_fixture();
  s.outcome.noise_probs = {0.9};
  EXPECT_THROW(s.validate(), ConfigError);
}
