#pragma once

// Brute-force ground truth on small discrete structural causal models.
//
// Every quantity here is computed by enumerating the joint support, so it is
// exact up to floating point and independent of the estimators it checks.

#include "drcfs/common.hpp"
#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace drcfs::oracle {

inline constexpr double kMaxCells = 1e7;

// A feature node. Parents must have smaller indices, so index order is a
// topological order. cpt has one row per parent configuration (mixed radix,
// first parent most significant), each row a distribution over `support`.
struct DiscreteNode {
  std::string name;
  std::vector<double> support;
  std::vector<std::size_t> parents;
  std::vector<std::vector<double>> cpt;
  bool hidden = false;
};

// Y = table[config of parents] + noise, noise independent of everything.
struct DiscreteOutcome {
  std::vector<std::size_t> parents;
  std::vector<double> table;
  std::vector<double> noise_support{0.0};
  std::vector<double> noise_probs{1.0};

  double noise_mean() const {
    double s = 0.0;
    for (std::size_t i = 0; i < noise_support.size(); ++i) s += noise_support[i] * noise_probs[i];
    return s;
  }
};

struct DiscreteSCM {
  std::vector<DiscreteNode> nodes;
  DiscreteOutcome outcome;

  std::size_t size() const { return nodes.size(); }

  std::vector<std::size_t> observed() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (!nodes[i].hidden) out.push_back(i);
    return out;
  }

  std::size_t config_count(const std::vector<std::size_t>& idx) const {
    std::size_t c = 1;
    for (auto i : idx) c *= nodes[i].support.size();
    return c;
  }

  void validate() const {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& nd = nodes[i];
      const std::string who = "node " + (nd.name.empty() ? std::to_string(i) : nd.name);
      if (nd.support.empty()) throw ConfigError(who + ": empty support");
      for (auto p : nd.parents)
        if (p >= i) throw ConfigError(who + ": parents must precede the node");
      if (nd.cpt.size() != config_count(nd.parents)) {
        throw ConfigError(who + ": expected " + std::to_string(config_count(nd.parents)) + " CPT rows, got " +
                          std::to_string(nd.cpt.size()));
      }
      for (const auto& row : nd.cpt) {
        if (row.size() != nd.support.size()) throw ConfigError(who + ": CPT row length differs from support");
        double s = 0.0;
        for (double q : row) {
          if (!(q >= 0.0)) throw ConfigError(who + ": negative CPT entry");
          s += q;
        }
        if (std::abs(s - 1.0) > 1e-12) throw ConfigError(who + ": CPT row sums to " + std::to_string(s));
      }
    }
    for (auto p : outcome.parents) {
      if (p >= nodes.size()) throw ConfigError("outcome: parent index out of range");
      if (nodes[p].hidden) throw ConfigError("outcome: parent " + std::to_string(p) + " is hidden");
    }
    if (outcome.table.size() != config_count(outcome.parents)) throw ConfigError("outcome: table size mismatch");
    if (outcome.noise_support.size() != outcome.noise_probs.size() || outcome.noise_support.empty()) {
      throw ConfigError("outcome: noise support and probabilities differ in length");
    }
    double s = 0.0;
    for (double q : outcome.noise_probs) s += q;
    if (std::abs(s - 1.0) > 1e-12) throw ConfigError("outcome: noise probabilities sum to " + std::to_string(s));
    std::vector<std::size_t> all(nodes.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    if (static_cast<double>(config_count(all)) > kMaxCells) throw ConfigError("joint support exceeds 1e7 cells");
  }
};

namespace detail {

// Mixed-radix index of the values picked by `state` at nodes `idx`.
inline std::size_t config_index(const DiscreteSCM& s, const std::vector<std::size_t>& idx,
                                const std::vector<std::size_t>& state) {
  std::size_t k = 0;
  for (auto i : idx) k = k * s.nodes[i].support.size() + state[i];
  return k;
}

// Calls fn(state, probability) for every joint configuration with positive
// probability. `fixed[i] >= 0` pins node i to that support position and
// replaces its mechanism (the do-operator).
template <class Fn>
void enumerate(const DiscreteSCM& s, const std::vector<long>& fixed, Fn&& fn) {
  const std::size_t m = s.size();
  std::vector<std::size_t> state(m, 0);
  auto rec = [&](auto&& self, std::size_t i, double prob) -> void {
    if (i == m) {
      fn(state, prob);
      return;
    }
    const auto& nd = s.nodes[i];
    if (fixed[i] >= 0) {
      state[i] = static_cast<std::size_t>(fixed[i]);
      self(self, i + 1, prob);
      return;
    }
    const auto& row = nd.cpt[config_index(s, nd.parents, state)];
    for (std::size_t v = 0; v < nd.support.size(); ++v) {
      if (row[v] == 0.0) continue;
      state[i] = v;
      self(self, i + 1, prob * row[v]);
    }
  };
  rec(rec, 0, 1.0);
}

inline double outcome_mean(const DiscreteSCM& s, const std::vector<std::size_t>& state) {
  return s.outcome.table[config_index(s, s.outcome.parents, state)] + s.outcome.noise_mean();
}

// Observational distribution of the observed features: probability and
// E[Y | x] per observed configuration (mixed radix over `obs`).
struct ObservedTable {
  std::vector<std::size_t> obs;
  std::vector<double> prob;
  std::vector<double> mean;
};

inline ObservedTable observed_table(const DiscreteSCM& s) {
  ObservedTable t;
  t.obs = s.observed();
  const std::size_t cells = s.config_count(t.obs);
  t.prob.assign(cells, 0.0);
  std::vector<double> ysum(cells, 0.0);
  enumerate(s, std::vector<long>(s.size(), -1), [&](const std::vector<std::size_t>& st, double p) {
    const std::size_t k = config_index(s, t.obs, st);
    t.prob[k] += p;
    ysum[k] += p * outcome_mean(s, st);
  });
  t.mean.assign(cells, 0.0);
  for (std::size_t k = 0; k < cells; ++k)
    if (t.prob[k] > 0.0) t.mean[k] = ysum[k] / t.prob[k];
  return t;
}

// Decodes a mixed-radix index back into support positions for `obs`.
inline std::vector<std::size_t> decode(const DiscreteSCM& s, const std::vector<std::size_t>& obs, std::size_t k) {
  std::vector<std::size_t> pos(obs.size());
  for (std::size_t r = obs.size(); r-- > 0;) {
    const std::size_t base = s.nodes[obs[r]].support.size();
    pos[r] = k % base;
    k /= base;
  }
  return pos;
}

// E[Y | x without column c] for every observed configuration.
inline std::vector<double> drop_mean(const DiscreteSCM& s, const ObservedTable& t, std::size_t c) {
  const std::size_t cells = t.prob.size();
  std::size_t stride = 1;
  for (std::size_t r = c + 1; r < t.obs.size(); ++r) stride *= s.nodes[t.obs[r]].support.size();
  const std::size_t base = s.nodes[t.obs[c]].support.size();
  std::vector<double> out(cells, 0.0);
  for (std::size_t k = 0; k < cells; ++k) {
    const std::size_t first = k - ((k / stride) % base) * stride;
    double pm = 0.0, ym = 0.0;
    for (std::size_t v = 0; v < base; ++v) {
      pm += t.prob[first + v * stride];
      ym += t.prob[first + v * stride] * t.mean[first + v * stride];
    }
    out[k] = pm > 0.0 ? ym / pm : 0.0;
  }
  return out;
}

inline std::size_t observed_position(const DiscreteSCM& s, std::size_t j) {
  const auto obs = s.observed();
  for (std::size_t c = 0; c < obs.size(); ++c)
    if (obs[c] == j) return c;
  throw ConfigError("feature " + std::to_string(j) + " is hidden or out of range");
}

}  // namespace detail

// chi_j = E[(E[Y|X] - E[Y|X without j])^2] over the observed features.
// j indexes nodes (not observed columns).
inline double exact_chi(const DiscreteSCM& s, std::size_t j) {
  s.validate();
  const std::size_t c = detail::observed_position(s, j);
  const auto t = detail::observed_table(s);
  const auto h = detail::drop_mean(s, t, c);
  double chi = 0.0;
  for (std::size_t k = 0; k < t.prob.size(); ++k) chi += t.prob[k] * (t.mean[k] - h[k]) * (t.mean[k] - h[k]);
  return chi;
}

// chi_j via E[Y g0(X)] - E[Y h_j(X)], with Y = table + noise summed
// explicitly over the noise support instead of through E[Y|X].
inline std::vector<double> chi_from_moments(const DiscreteSCM& s) {
  s.validate();
  const auto t = detail::observed_table(s);
  std::vector<std::vector<double>> drop;
  for (std::size_t c = 0; c < t.obs.size(); ++c) drop.push_back(detail::drop_mean(s, t, c));
  std::vector<double> theta_j(t.obs.size(), 0.0);
  double theta0 = 0.0;
  const auto& nz = s.outcome;
  detail::enumerate(s, std::vector<long>(s.size(), -1), [&](const std::vector<std::size_t>& st, double p) {
    const std::size_t k = detail::config_index(s, t.obs, st);
    const double f = nz.table[detail::config_index(s, nz.parents, st)];
    for (std::size_t e = 0; e < nz.noise_support.size(); ++e) {
      const double w = p * nz.noise_probs[e];
      const double y = f + nz.noise_support[e];
      theta0 += w * y * t.mean[k];
      for (std::size_t c = 0; c < t.obs.size(); ++c) theta_j[c] += w * y * drop[c][k];
    }
  });
  std::vector<double> chi(t.obs.size());
  for (std::size_t c = 0; c < chi.size(); ++c) chi[c] = theta0 - theta_j[c];
  return chi;
}

struct AcdeResult {
  double interventional = 0.0;  // E[Y|do(x_j, ctx)] - E[Y|do(x_j', ctx)]
  double observational = 0.0;   // E[Y|x_j, ctx] - E[Y|x_j', ctx]
};

// Values are support positions. `context` holds one position per observed
// feature; the entry for j itself is ignored.
inline AcdeResult exact_acde(const DiscreteSCM& s, std::size_t j, std::size_t xj, std::size_t xj_alt,
                             const std::vector<std::size_t>& context) {
  s.validate();
  const auto obs = s.observed();
  const std::size_t c = detail::observed_position(s, j);
  if (context.size() != obs.size()) throw ConfigError("exact_acde: context must list every observed feature");

  auto with = [&](std::size_t v) {
    std::vector<std::size_t> pos = context;
    pos[c] = v;
    for (std::size_t r = 0; r < obs.size(); ++r)
      if (pos[r] >= s.nodes[obs[r]].support.size()) throw ConfigError("exact_acde: value outside support");
    return pos;
  };

  auto do_mean = [&](const std::vector<std::size_t>& pos) {
    std::vector<long> fixed(s.size(), -1);
    for (std::size_t r = 0; r < obs.size(); ++r) fixed[obs[r]] = static_cast<long>(pos[r]);
    double ey = 0.0, mass = 0.0;
    detail::enumerate(s, fixed, [&](const std::vector<std::size_t>& st, double p) {
      ey += p * detail::outcome_mean(s, st);
      mass += p;
    });
    return ey / mass;
  };

  auto cond_mean = [&](const std::vector<std::size_t>& pos) {
    double ey = 0.0, mass = 0.0;
    detail::enumerate(s, std::vector<long>(s.size(), -1), [&](const std::vector<std::size_t>& st, double p) {
      for (std::size_t r = 0; r < obs.size(); ++r)
        if (st[obs[r]] != pos[r]) return;
      ey += p * detail::outcome_mean(s, st);
      mass += p;
    });
    if (mass <= 0.0) throw EstimationError("exact_acde: conditioning context has zero probability");
    return ey / mass;
  };

  const auto a = with(xj), b = with(xj_alt);
  return {do_mean(a) - do_mean(b), cond_mean(a) - cond_mean(b)};
}

// True iff every parent of Y changes the outcome mean somewhere, holding the
// other parents fixed.
inline bool outcome_nondegenerate(const DiscreteSCM& s, double tol = 1e-9) {
  const auto& pa = s.outcome.parents;
  for (std::size_t r = 0; r < pa.size(); ++r) {
    std::size_t stride = 1;
    for (std::size_t q = r + 1; q < pa.size(); ++q) stride *= s.nodes[pa[q]].support.size();
    const std::size_t base = s.nodes[pa[r]].support.size();
    bool moves = false;
    for (std::size_t k = 0; k < s.outcome.table.size() && !moves; ++k) {
      if ((k / stride) % base != 0) continue;
      for (std::size_t v = 1; v < base; ++v)
        if (std::abs(s.outcome.table[k + v * stride] - s.outcome.table[k]) > tol) moves = true;
    }
    if (!moves) return false;
  }
  return true;
}

// Random binary SCM with `features` observed nodes plus an optional hidden
// confounder placed first. CPT entries are bounded away from 0 and 1 so every
// context has positive probability.
inline DiscreteSCM random_binary_scm(std::size_t features, std::uint64_t seed, bool hidden_confounder = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0), prob(0.1, 0.9), val(-2.0, 2.0);
  DiscreteSCM s;
  if (hidden_confounder) {
    DiscreteNode h;
    h.name = "U";
    h.support = {0.0, 1.0};
    const double q = prob(rng);
    h.cpt = {{1.0 - q, q}};
    h.hidden = true;
    s.nodes.push_back(h);
  }
  for (std::size_t f = 0; f < features; ++f) {
    DiscreteNode nd;
    nd.name = "X" + std::to_string(f + 1);
    nd.support = {0.0, 1.0};
    for (std::size_t p = 0; p < s.nodes.size(); ++p)
      if (u01(rng) < 0.5) nd.parents.push_back(p);
    for (std::size_t r = 0; r < s.config_count(nd.parents); ++r) {
      const double q = prob(rng);
      nd.cpt.push_back({1.0 - q, q});
    }
    s.nodes.push_back(nd);
  }
  for (auto i : s.observed())
    if (u01(rng) < 0.5) s.outcome.parents.push_back(i);
  do {
    s.outcome.table.clear();
    for (std::size_t r = 0; r < s.config_count(s.outcome.parents); ++r) s.outcome.table.push_back(val(rng));
  } while (!outcome_nondegenerate(s));
  const double q0 = prob(rng), q1 = prob(rng) * (1.0 - q0);
  s.outcome.noise_support = {-1.0, 0.0, 1.0};
  s.outcome.noise_probs = {q0, q1, 1.0 - q0 - q1};
  return s;
}

// X1, X2 iid Bernoulli(0.5); Y = table over (X1, X2).
inline DiscreteSCM two_coin_scm(std::vector<std::size_t> parents, std::vector<double> table) {
  DiscreteSCM s;
  for (const char* name : {"X1", "X2"}) {
    DiscreteNode nd;
    nd.name = name;
    nd.support = {0.0, 1.0};
    nd.cpt = {{0.5, 0.5}};
    s.nodes.push_back(nd);
  }
  s.outcome.parents = std::move(parents);
  s.outcome.table = std::move(table);
  return s;
}

// Y = X1.
inline DiscreteSCM identity_fixture() { return two_coin_scm({0}, {0.0, 1.0}); }
// Y = X1 xor X2.
inline DiscreteSCM xor_fixture() { return two_coin_scm({0, 1}, {0.0, 1.0, 1.0, 0.0}); }
// Y = constant + noise, independent of the features.
inline DiscreteSCM independent_fixture() {
  auto s = two_coin_scm({}, {0.0});
  s.outcome.noise_support = {-1.0, 1.0};
  s.outcome.noise_probs = {0.5, 0.5};
  return s;
}

// Samples n draws of the observed features and the outcome.
inline std::pair<Matrix, Vector> sample(const DiscreteSCM& s, Index n, std::uint64_t seed) {
  s.validate();
  std::mt19937_64 rng(seed);
  const auto obs = s.observed();
  Matrix x(n, static_cast<Index>(obs.size()));
  Vector y(n);
  std::vector<std::size_t> st(s.size());
  for (Index i = 0; i < n; ++i) {
    for (std::size_t v = 0; v < s.size(); ++v) {
      const auto& row = s.nodes[v].cpt[detail::config_index(s, s.nodes[v].parents, st)];
      std::discrete_distribution<std::size_t> d(row.begin(), row.end());
      st[v] = d(rng);
    }
    for (std::size_t c = 0; c < obs.size(); ++c)
      x(i, static_cast<Index>(c)) = s.nodes[obs[c]].support[st[obs[c]]];
    std::discrete_distribution<std::size_t> e(s.outcome.noise_probs.begin(), s.outcome.noise_probs.end());
    y(i) = s.outcome.table[detail::config_index(s, s.outcome.parents, st)] + s.outcome.noise_support[e(rng)];
  }
  return {x, y};
}

// ---- Non-identifiability pairs ---------------------------------------------

struct FixturePair {
  Matrix first;   // n x 2, columns (X, Y)
  Matrix second;  // n x 2, columns (X, Y)
  bool first_has_parent = false;
  bool second_has_parent = false;
};

// Pair 1: X=N1, Y=eps1 with corr(N1, eps1)=1, versus X=N2, Y=X. Exogeneity of
// the noise fails in the first.
// Pair 2: X=N1, Y=X+eps1, versus Y=eps2 ~ N(0,2), X=0.5 Y + N2 with
// N2 ~ N(0,0.5). The outcome causes the feature in the second.
inline std::pair<FixturePair, FixturePair> counterexample_fixtures(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  FixturePair a, b;
  a.first.resize(n, 2);
  a.second.resize(n, 2);
  b.first.resize(n, 2);
  b.second.resize(n, 2);
  a.second_has_parent = true;
  b.first_has_parent = true;
  for (Index i = 0; i < n; ++i) {
    const double n1 = z(rng);
    a.first(i, 0) = n1;
    a.first(i, 1) = n1;  // Sigma = [[1,1],[1,1]] makes eps1 equal N1
    const double n2 = z(rng);
    a.second(i, 0) = n2;
    a.second(i, 1) = n2;
    const double x1 = z(rng), e1 = z(rng);
    b.first(i, 0) = x1;
    b.first(i, 1) = x1 + e1;
    const double y2 = std::sqrt(2.0) * z(rng);
    b.second(i, 1) = y2;
    b.second(i, 0) = 0.5 * y2 + std::sqrt(0.5) * z(rng);
  }
  return {a, b};
}

inline Matrix sample_covariance(const Matrix& x) {
  const Matrix c = x.rowwise() - x.colwise().mean();
  return c.transpose() * c / static_cast<double>(x.rows() - 1);
}

// ---- JSON ------------------------------------------------------------------

inline nlohmann::json to_json(const DiscreteSCM& s) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& nd : s.nodes) {
    nodes.push_back({{"name", nd.name},
                     {"support", nd.support},
                     {"parents", nd.parents},
                     {"cpt", nd.cpt},
                     {"hidden", nd.hidden}});
  }
  return {{"nodes", nodes},
          {"outcome",
           {{"parents", s.outcome.parents},
            {"table", s.outcome.table},
            {"noise", {{"support", s.outcome.noise_support}, {"probs", s.outcome.noise_probs}}}}}};
}

inline DiscreteSCM scm_from_json(const nlohmann::json& j) {
  try {
    DiscreteSCM s;
    for (const auto& jn : j.at("nodes")) {
      DiscreteNode nd;
      nd.name = jn.value("name", std::string{});
      nd.support = jn.at("support").get<std::vector<double>>();
      nd.parents = jn.value("parents", std::vector<std::size_t>{});
      nd.cpt = jn.at("cpt").get<std::vector<std::vector<double>>>();
      nd.hidden = jn.value("hidden", false);
      s.nodes.push_back(std::move(nd));
    }
    const auto& jo = j.at("outcome");
    s.outcome.parents = jo.value("parents", std::vector<std::size_t>{});
    s.outcome.table = jo.at("table").get<std::vector<double>>();
    if (jo.contains("noise")) {
      s.outcome.noise_support = jo.at("noise").at("support").get<std::vector<double>>();
      s.outcome.noise_probs = jo.at("noise").at("probs").get<std::vector<double>>();
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("discrete SCM JSON: ") + e.what());
  }
}

}  // namespace drcfs::oracle
