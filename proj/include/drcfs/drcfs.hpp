#pragma once

// Doubly robust causal feature selection.
//
// For every feature j the statistic chi_j = E[(E[Y|X] - E[Y|X_j^c])^2] is
// written as theta_0 - theta_j with theta_0 = E[Y g0(X)] and
// theta_j = E[Y h0(X_j^c)]. Each theta is estimated by k-fold cross-fitting of
// a debiased score; the per-observation score differences feed a paired
// t-test, and the m p-values are corrected with Benjamini-Yekutieli.

#include "drcfs/common.hpp"
#include "drcfs/metrics.hpp"
#include "drcfs/nuisance.hpp"
#include "json.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace drcfs {

// Plain numeric dataset: n x d features, outcome, one name per column.
struct Dataset {
  Matrix features;
  Vector outcome;
  std::vector<std::string> names;

  Index rows() const { return features.rows(); }
  Index cols() const { return features.cols(); }
};

// ---- Folds -----------------------------------------------------------------

struct FoldPlan {
  int k = 0;
  std::vector<int> assignment;  // fold id per observation
  std::uint64_t seed = 0;

  std::vector<Index> evaluation_indices(int fold) const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == fold) out.push_back(static_cast<Index>(i));
    return out;
  }

  std::vector<Index> training_indices(int fold) const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] != fold) out.push_back(static_cast<Index>(i));
    return out;
  }

  std::vector<std::size_t> fold_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
    for (int f : assignment) ++sizes[static_cast<std::size_t>(f)];
    return sizes;
  }
};

// Uniformly random balanced partition of {0..n-1} into k folds.
inline FoldPlan make_folds(Index n, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("make_folds: need k >= 2, got " + std::to_string(k));
  if (static_cast<Index>(k) > n) {
    throw ConfigError("make_folds: k=" + std::to_string(k) + " exceeds the number of rows n=" + std::to_string(n));
  }
  std::vector<std::size_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignment.assign(static_cast<std::size_t>(n), 0);
  for (std::size_t i = 0; i < perm.size(); ++i) plan.assignment[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return plan;
}

// ---- Scores ----------------------------------------------------------------

// eq3:   psi = Y g + alpha (Y - g), the debiased score of E[Y g0(X)].
// paper: psi = Y g - Y alpha - alpha g, the literal per-fold estimator, which
//        targets -E[g0^2] with exact nuisances.
enum class ScoreConvention { Eq3, PaperLiteral };

inline const char* convention_name(ScoreConvention c) { return c == ScoreConvention::Eq3 ? "eq3" : "paper"; }

inline ScoreConvention parse_convention(const std::string& s) {
  if (s == "eq3") return ScoreConvention::Eq3;
  if (s == "paper" || s == "paper-literal") return ScoreConvention::PaperLiteral;
  throw ConfigError("convention: expected 'eq3' or 'paper', got '" + s + "'");
}

inline double score_value(double y, double g, double alpha, ScoreConvention c) {
  return c == ScoreConvention::Eq3 ? y * g + alpha * (y - g) : y * g - y * alpha - alpha * g;
}

struct ScoreSamples {
  Vector values;          // per observation, aligned with the dataset rows
  std::vector<int> fold;  // fold that scored each observation
  ScoreConvention convention = ScoreConvention::Eq3;
  std::vector<double> fold_theta;
  std::vector<double> fold_variance;
  double theta = 0.0;     // mean of fold_theta
  double variance = 0.0;  // mean of fold_variance
};

// Conditioning sets.
inline std::vector<Index> all_columns(Index d) {
  std::vector<Index> c(static_cast<std::size_t>(d));
  std::iota(c.begin(), c.end(), Index{0});
  return c;
}

inline std::vector<Index> drop_column(Index d, Index j) {
  std::vector<Index> c;
  for (Index i = 0; i < d; ++i)
    if (i != j) c.push_back(i);
  return c;
}

// Fits a nuisance pair on the training complement of `fold`. Receives the
// training rows already restricted to the conditioning columns.
using NuisanceFitter = std::function<NuisancePair(const Matrix& x_train, const Vector& y_train, int fold)>;

// Called once per fold with the rows used for fitting and the rows scored.
using FitObserver = std::function<void(int fold, const std::vector<Index>& train, const std::vector<Index>& eval)>;

inline ScoreSamples score_theta(const Matrix& features, const Vector& outcome, const FoldPlan& plan,
                                const std::vector<Index>& conditioning, const NuisanceFitter& fitter,
                                ScoreConvention convention, const FitObserver& observer = {}) {
  const Index n = features.rows();
  if (static_cast<Index>(plan.assignment.size()) != n || outcome.size() != n) {
    throw ConfigError("score_theta: fold plan, features and outcome disagree on the number of rows");
  }
  if (conditioning.empty()) throw ConfigError("score_theta: empty conditioning set");
  const Matrix xc = select_columns(features, conditioning);

  ScoreSamples s;
  s.values = Vector::Zero(n);
  s.fold = plan.assignment;
  s.convention = convention;
  for (int l = 0; l < plan.k; ++l) {
    const auto train = plan.training_indices(l);
    const auto eval = plan.evaluation_indices(l);
    if (observer) observer(l, train, eval);
    NuisancePair pair;
    try {
      pair = fitter(select_rows(xc, train), select_rows(outcome, train), l);
    } catch (const Error& e) {
      throw EstimationError("fold " + std::to_string(l) + ": " + e.what());
    }
    const Matrix xe = select_rows(xc, eval);
    const Vector g = predict(pair.mean_model, xe);
    const Vector a = predict(pair.riesz_model, xe);
    double sum = 0.0;
    for (std::size_t r = 0; r < eval.size(); ++r) {
      const auto i = static_cast<Index>(r);
      double v = score_value(outcome(eval[r]), g(i), a(i), convention);
      if (!std::isfinite(v)) throw EstimationError("fold " + std::to_string(l) + ": non-finite score");
      s.values(eval[r]) = v;
      sum += v;
    }
    const double cnt = static_cast<double>(eval.size());
    const double theta_l = sum / cnt;
    double ss = 0.0;
    for (Index i : eval) ss += (s.values(i) - theta_l) * (s.values(i) - theta_l);
    s.fold_theta.push_back(theta_l);
    s.fold_variance.push_back(ss / cnt);
  }
  s.theta = std::accumulate(s.fold_theta.begin(), s.fold_theta.end(), 0.0) / plan.k;
  s.variance = std::accumulate(s.fold_variance.begin(), s.fold_variance.end(), 0.0) / plan.k;
  return s;
}

// Per-fold seeds depend on the fold index only, never on the feature being
// tested, so permuting columns leaves every fit's random stream unchanged.
inline NuisanceFitter learner_fitter(const LearnerSpec& spec, Moment moment, std::uint64_t seed,
                                     std::vector<Index> columns, std::vector<std::string> names = {}) {
  return [spec, moment, seed, columns = std::move(columns), names = std::move(names)](
             const Matrix& x, const Vector& y, int fold) {
    return fit_nuisance_pair(x, y, spec, moment, derive_seed(seed, 0x6e75697361ULL, static_cast<std::uint64_t>(fold)),
                             columns, names);
  };
}

struct ChiEstimate {
  double chi = 0.0;
  Vector differences;  // psi_0,i - psi_j,i
};

inline ChiEstimate estimate_chi(const ScoreSamples& score0, const ScoreSamples& scorej) {
  if (score0.convention != scorej.convention) throw ConfigError("estimate_chi: score conventions differ");
  if (score0.values.size() != scorej.values.size() || score0.fold != scorej.fold) {
    throw ConfigError("estimate_chi: score samples are not aligned on the same observations and folds");
  }
  ChiEstimate out;
  out.differences = score0.values - scorej.values;
  out.chi = score0.theta - scorej.theta;
  return out;
}

// ---- Tests -----------------------------------------------------------------

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  bool degenerate = false;  // zero spread with a non-zero mean
};

// One-sample t-test of mean(d) = 0 (the paired test on score differences),
// two-sided, n - 1 degrees of freedom.
inline TTestResult paired_t_test(const Vector& d) {
  const Index n = d.size();
  if (n < 2) throw EstimationError("paired_t_test: need at least 2 differences, got " + std::to_string(n));
  const double mean = d.mean();
  const double ss = (d.array() - mean).square().sum();
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  TTestResult r;
  if (sd == 0.0) {
    if (mean == 0.0) return r;
    r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    r.degenerate = true;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  boost::math::students_t dist(static_cast<double>(n - 1));
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

// True when every |d_i| is below the resolution of a least-squares fit
// (sqrt(eps) relative to the score scale). Noise-free data produces such
// differences from rounding alone, and rounding is systematic enough for the
// t-test to call it significant.
inline bool negligible_differences(const Vector& d, const Vector& score0, const Vector& scorej) {
  if (d.size() == 0) return true;
  const double n = static_cast<double>(d.size());
  const double scale = std::max(std::sqrt(score0.squaredNorm() / n), std::sqrt(scorej.squaredNorm() / n));
  const double tol = std::sqrt(std::numeric_limits<double>::epsilon()) * scale;
  return d.cwiseAbs().maxCoeff() <= tol;
}

struct BYResult {
  std::vector<double> adjusted;
  std::vector<bool> reject;
};

// Benjamini-Yekutieli step-up with c(m) = sum_{i<=m} 1/i. Adjusted p-values are
// min over k >= rank of m c(m) p_(k) / k, clipped to 1; rejecting
// adjusted <= q is the step-up rule.
inline BYResult by_adjust(const std::vector<double>& p, double q) {
  const std::size_t m = p.size();
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("by_adjust: p-values must lie in [0,1]");
  BYResult out;
  out.adjusted.assign(m, 1.0);
  out.reject.assign(m, false);
  if (m == 0) return out;
  double cm = 0.0;
  for (std::size_t i = 1; i <= m; ++i) cm += 1.0 / static_cast<double>(i);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const std::size_t idx = order[r];
    const double adj = static_cast<double>(m) * cm * p[idx] / static_cast<double>(r + 1);
    running = std::min(running, adj);
    out.adjusted[idx] = std::min(1.0, running);
  }
  for (std::size_t i = 0; i < m; ++i) out.reject[i] = out.adjusted[i] <= q;
  return out;
}

// ---- Full pipeline ---------------------------------------------------------

struct DrcfsConfig {
  int k = 5;
  double q = 0.05;
  LearnerSpec learner{};
  ScoreConvention convention = ScoreConvention::Eq3;
  unsigned threads = 1;
  std::uint64_t seed = 0;
};

struct FeatureTestResult {
  std::string name;
  Index column = 0;
  double theta0 = 0.0;
  double thetaj = 0.0;
  double chi = 0.0;
  double var0 = 0.0;  // mean per-fold score variance, full conditioning set
  double varj = 0.0;  // same for the drop-j conditioning set
  double t = 0.0;
  double p_raw = 1.0;
  double p_adj = 1.0;
  bool selected = false;
};

struct SelectionReport {
  std::vector<FeatureTestResult> results;
  double q = 0.05;
  FoldPlan plan;
  DrcfsConfig config;
  double wall_ms = 0.0;
  std::vector<std::string> warnings;
  std::optional<SelectionMetrics> metrics;

  std::vector<bool> selected_mask() const {
    std::vector<bool> m;
    for (const auto& r : results) m.push_back(r.selected);
    return m;
  }

  std::vector<std::string> selected_names() const {
    std::vector<std::string> out;
    for (const auto& r : results)
      if (r.selected) out.push_back(r.name);
    return out;
  }
};

// Builds a fitter for a conditioning set; lets callers substitute nuisances.
using FitterFactory = std::function<NuisanceFitter(const std::vector<Index>& conditioning, Moment moment)>;

inline FitterFactory default_fitter_factory(const DrcfsConfig& config, const std::vector<std::string>& names) {
  return [config, names](const std::vector<Index>& cols, Moment moment) {
    LearnerSpec spec = config.learner;
    if (config.threads > 1) spec.forest.threads = 1;  // parallelism is over features
    std::vector<std::string> sub;
    for (Index c : cols) sub.push_back(c < static_cast<Index>(names.size()) ? names[static_cast<std::size_t>(c)] : "");
    return learner_fitter(spec, moment, config.seed, cols, sub);
  };
}

inline SelectionReport run_drcfs(const Dataset& data, const DrcfsConfig& config, const FitterFactory& factory) {
  const auto start = std::chrono::steady_clock::now();
  const Index n = data.rows();
  const Index d = data.cols();
  if (d < 2) throw ConfigError("run_drcfs: need at least 2 feature columns, got " + std::to_string(d));
  if (data.outcome.size() != n) throw ConfigError("run_drcfs: outcome length differs from the number of rows");
  if (!(config.q > 0.0 && config.q <= 1.0)) throw ConfigError("run_drcfs: q must lie in (0,1]");

  SelectionReport report;
  report.q = config.q;
  report.config = config;
  report.plan = make_folds(n, config.k, derive_seed(config.seed, 0x666f6c6473ULL));

  const auto full = all_columns(d);
  const ScoreSamples score0 = score_theta(data.features, data.outcome, report.plan, full,
                                          factory(full, Moment::FullConditioning), config.convention);

  report.results.resize(static_cast<std::size_t>(d));
  std::vector<std::string> warn(static_cast<std::size_t>(d));
  parallel_for(static_cast<std::size_t>(d), std::max(1u, config.threads), [&](std::size_t jj) {
    const auto j = static_cast<Index>(jj);
    const auto cols = drop_column(d, j);
    ScoreSamples scorej;
    try {
      scorej = score_theta(data.features, data.outcome, report.plan, cols, factory(cols, Moment::DropColumn),
                           config.convention);
    } catch (const Error& e) {
      throw EstimationError("feature " + (jj < data.names.size() ? data.names[jj] : std::to_string(jj)) + ", " +
                            e.what());
    }
    const ChiEstimate chi = estimate_chi(score0, scorej);
    const bool negligible = negligible_differences(chi.differences, score0.values, scorej.values);
    const TTestResult tt = negligible ? TTestResult{} : paired_t_test(chi.differences);
    auto& r = report.results[jj];
    r.name = jj < data.names.size() ? data.names[jj] : "X" + std::to_string(jj + 1);
    r.column = j;
    r.theta0 = score0.theta;
    r.thetaj = scorej.theta;
    r.chi = chi.chi;
    r.var0 = score0.variance;
    r.varj = scorej.variance;
    r.t = tt.t;
    r.p_raw = tt.p;
    if (negligible) warn[jj] = r.name + ": score differences below numerical resolution (treated as zero, p = 1)";
    if (tt.degenerate) warn[jj] = r.name + ": score differences have zero spread and non-zero mean (p set to 0)";
  });
  for (auto& w : warn)
    if (!w.empty()) report.warnings.push_back(std::move(w));

  std::vector<double> p;
  for (const auto& r : report.results) p.push_back(r.p_raw);
  const BYResult by = by_adjust(p, config.q);
  for (std::size_t j = 0; j < report.results.size(); ++j) {
    report.results[j].p_adj = by.adjusted[j];
    report.results[j].selected = by.reject[j];
  }
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

inline SelectionReport run_drcfs(const Dataset& data, const DrcfsConfig& config) {
  return run_drcfs(data, config, default_fitter_factory(config, data.names));
}

// ---- JSON ------------------------------------------------------------------

inline nlohmann::json learner_json(const LearnerSpec& s) {
  nlohmann::json j = {{"kind", s.name()}, {"map", s.map.id()}, {"nuisance_split", split_name(s.split)}};
  if (s.kind == LearnerSpec::Kind::Linear) {
    if (s.linear.lambda) j["lambda"] = *s.linear.lambda;
    else j["lambda"] = "cv";
    j["cv_folds"] = s.linear.cv_folds;
    j["lambda_grid"] = s.linear.grid;
  } else {
    j["trees"] = s.forest.trees;
    j["min_leaf"] = s.forest.min_leaf;
    j["honest_fraction"] = s.forest.honest_fraction;
    j["subsample"] = s.forest.subsample;
    j["leaf_ridge"] = s.forest.leaf_ridge;
    j["mtry"] = s.forest.mtry;
  }
  return j;
}

inline nlohmann::json metrics_json(const SelectionMetrics& m) {
  return {{"tp", m.counts.tp}, {"tn", m.counts.tn}, {"fp", m.counts.fp}, {"fn", m.counts.fn},
          {"acc", m.acc},      {"f1", m.f1},        {"csi", m.csi}};
}

inline nlohmann::json report_json(const SelectionReport& r, bool include_timing = true) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : r.results) {
    features.push_back({{"name", f.name},
                        {"theta0", f.theta0},
                        {"thetaj", f.thetaj},
                        {"chi", f.chi},
                        {"var0", f.var0},
                        {"varj", f.varj},
                        {"t", std::isfinite(f.t) ? nlohmann::json(f.t) : nlohmann::json(f.t > 0 ? "inf" : "-inf")},
                        {"p_raw", f.p_raw},
                        {"p_adj", f.p_adj},
                        {"selected", f.selected}});
  }
  nlohmann::json j = {{"tool", "drcfs"},
                      {"version", kVersion},
                      {"run",
                       {{"seed", r.config.seed},
                        {"k", r.config.k},
                        {"q", r.q},
                        {"learner", learner_json(r.config.learner)},
                        {"convention", convention_name(r.config.convention)},
                        {"fold_sizes", r.plan.fold_sizes()}}},
                      {"features", features},
                      {"selected", r.selected_names()},
                      {"warnings", r.warnings}};
  if (r.metrics) j["metrics"] = metrics_json(*r.metrics);
  j["run"]["wall_ms"] = include_timing ? r.wall_ms : 0.0;
  return j;
}

}  // namespace drcfs
