#pragma once

// Nuisance learners for the debiased score: the conditional mean g(X) and the
// Riesz representer alpha(X) of the moment m(V; g) = Y g(X).
//
// Both learners solve a least-squares system in a feature map phi. For the
// two moments supported here m(V; phi) = Y phi, so the Riesz normal equations
// (E_n[phi phi^T] + lambda I) gamma = E_n[Y phi] coincide with the regression
// ones. The two nuisances are still fitted as separate model instances with
// their own random streams (CV folds for the ridge, subsamples for forests).

#include "drcfs/common.hpp"
#include "json.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace drcfs {

// ---- Feature map -----------------------------------------------------------

class FeatureMap {
 public:
  using Custom = std::function<double(std::span<const double>)>;

  enum class Kind { Identity, Polynomial, Custom };

  FeatureMap() = default;

  static FeatureMap identity() { return FeatureMap{}; }

  // Per-column powers 1..degree (no interaction terms).
  static FeatureMap polynomial(int degree) {
    if (degree < 1) throw ConfigError("feature map: polynomial degree must be >= 1");
    FeatureMap f;
    f.kind_ = degree == 1 ? Kind::Identity : Kind::Polynomial;
    f.degree_ = degree;
    return f;
  }

  // A table of user functions, each mapping the raw row to one output.
  static FeatureMap custom(std::string name, std::vector<Custom> table) {
    if (table.empty()) throw ConfigError("feature map: custom table is empty");
    FeatureMap f;
    f.kind_ = Kind::Custom;
    f.name_ = std::move(name);
    f.table_ = std::move(table);
    return f;
  }

  // "identity" or "poly:<d>".
  static FeatureMap parse(const std::string& s) {
    if (s == "identity") return identity();
    if (s.rfind("poly:", 0) == 0) {
      try {
        return polynomial(std::stoi(s.substr(5)));
      } catch (const std::logic_error&) {
      }
    }
    throw ConfigError("feature map: expected 'identity' or 'poly:<degree>', got '" + s + "'");
  }

  Kind kind() const { return kind_; }
  int degree() const { return degree_; }

  std::string id() const {
    switch (kind_) {
      case Kind::Identity: return "identity";
      case Kind::Polynomial: return "poly:" + std::to_string(degree_);
      case Kind::Custom: return "custom:" + name_;
    }
    return "identity";
  }

  Index output_dimension(Index input_dim) const {
    switch (kind_) {
      case Kind::Identity: return input_dim;
      case Kind::Polynomial: return input_dim * degree_;
      case Kind::Custom: return static_cast<Index>(table_.size());
    }
    return input_dim;
  }

  // Source input column of mapped column k (identity and polynomial only).
  Index source_column(Index k, Index input_dim) const {
    if (kind_ == Kind::Custom) return -1;
    return k % input_dim;
  }

  Matrix apply(const Matrix& x) const {
    if (kind_ == Kind::Identity) return x;
    const Index d = x.cols();
    Matrix out(x.rows(), output_dimension(d));
    if (kind_ == Kind::Polynomial) {
      for (int p = 1; p <= degree_; ++p)
        out.middleCols((p - 1) * d, d) = x.array().pow(static_cast<double>(p)).matrix();
      return out;
    }
    std::vector<double> row(static_cast<std::size_t>(d));
    for (Index i = 0; i < x.rows(); ++i) {
      for (Index j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] = x(i, j);
      for (std::size_t k = 0; k < table_.size(); ++k) out(i, static_cast<Index>(k)) = table_[k](row);
    }
    return out;
  }

 private:
  Kind kind_ = Kind::Identity;
  int degree_ = 1;
  std::string name_;
  std::vector<Custom> table_;
};

// ---- Shared pieces ---------------------------------------------------------

enum class Target { Mean, Riesz };

// The two moment functionals of the selection statistic: m0(V; g) = Y g(X)
// over all columns and mj(V; h) = Y h(X_j^c) over all columns but one. Both
// are Y times the function, which is all the solver relies on.
enum class Moment { FullConditioning, DropColumn };

inline const char* target_name(Target t) { return t == Target::Mean ? "mean" : "riesz"; }

struct Standardization {
  Vector mean;
  Vector scale;  // 1 for constant columns, which are zeroed after centering
  std::vector<bool> constant;

  static Standardization fit(const Matrix& phi) {
    Standardization s;
    const Index p = phi.cols();
    const double n = static_cast<double>(phi.rows());
    s.mean = phi.colwise().mean().transpose();
    s.scale = Vector::Ones(p);
    s.constant.assign(static_cast<std::size_t>(p), false);
    for (Index j = 0; j < p; ++j) {
      double var = (phi.col(j).array() - s.mean(j)).square().sum() / n;
      double sd = std::sqrt(var);
      if (!(sd > 1e-12 * std::max(1.0, std::abs(s.mean(j))))) {
        s.constant[static_cast<std::size_t>(j)] = true;
      } else {
        s.scale(j) = sd;
      }
    }
    return s;
  }

  Matrix apply(const Matrix& phi) const {
    Matrix z = (phi.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
    for (std::size_t j = 0; j < constant.size(); ++j)
      if (constant[j]) z.col(static_cast<Index>(j)).setZero();
    return z;
  }
};

inline void check_finite(const Matrix& x, const Vector& y, const char* what) {
  if (!x.allFinite() || !y.allFinite()) throw EstimationError(std::string(what) + ": non-finite training data");
  if (x.rows() != y.size()) throw EstimationError(std::string(what) + ": row count mismatch");
  if (x.rows() == 0) throw EstimationError(std::string(what) + ": empty training set");
}

// ---- Linear (ridge) model --------------------------------------------------

struct LinearSpec {
  std::optional<double> lambda;  // fixed penalty; cross-validated when empty
  int cv_folds = 5;
  std::vector<double> grid{1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0};  // times trace(G)/p
  std::uint64_t seed = 0;
};

struct LinearModel {
  FeatureMap map;
  Index input_dim = 0;
  Vector coefficients;  // on the standardized feature scale
  double intercept = 0.0;
  double ridge_lambda = 0.0;
  Standardization standardization;
  Target target = Target::Mean;

  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    if (row.size() != input_dim) throw EstimationError("predict: row dimension mismatch");
    Matrix r = row;
    return predict(r)(0);
  }

  Vector predict(const Matrix& x) const {
    if (x.cols() != input_dim) throw EstimationError("predict: feature dimension mismatch");
    Matrix z = standardization.apply(map.apply(x));
    return (z * coefficients).array() + intercept;
  }

  // Coefficients and intercept on the unstandardized phi scale.
  Vector raw_coefficients() const { return coefficients.cwiseQuotient(standardization.scale); }
  double raw_intercept() const { return intercept - raw_coefficients().dot(standardization.mean); }
};

namespace detail {

// Solves (G + lambda I) beta = b. Throws, naming the columns spanning the null
// space, when lambda == 0 and G is singular.
inline Vector solve_ridge(const Matrix& gram, const Vector& rhs, double lambda,
                          const std::vector<std::string>& names) {
  const Index p = gram.rows();
  if (p == 0) return Vector(0);
  if (lambda <= 0.0) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    const Vector& ev = eig.eigenvalues();
    double top = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
    std::vector<std::string> offending;
    for (Index k = 0; k < p; ++k) {
      if (ev(k) > 1e-10 * top && ev(k) > 1e-14) continue;
      for (Index j = 0; j < p; ++j) {
        if (std::abs(eig.eigenvectors()(j, k)) < 1e-6) continue;
        std::string nm = j < static_cast<Index>(names.size()) ? names[static_cast<std::size_t>(j)]
                                                             : "column " + std::to_string(j);
        if (std::find(offending.begin(), offending.end(), nm) == offending.end()) offending.push_back(nm);
      }
    }
    if (!offending.empty()) {
      std::string msg = "ill-conditioned normal equations with lambda=0; offending columns:";
      for (const auto& nm : offending) msg += " " + nm;
      throw EstimationError(msg);
    }
    return gram.ldlt().solve(rhs);
  }
  Matrix a = gram;
  a.diagonal().array() += lambda;
  return a.ldlt().solve(rhs);
}

inline std::vector<std::string> mapped_names(const FeatureMap& map, Index input_dim,
                                             const std::vector<std::string>& input_names) {
  std::vector<std::string> out;
  const Index p = map.output_dimension(input_dim);
  for (Index k = 0; k < p; ++k) {
    Index src = map.source_column(k, input_dim);
    std::string base = src >= 0 && src < static_cast<Index>(input_names.size())
                           ? input_names[static_cast<std::size_t>(src)]
                           : (src >= 0 ? "column " + std::to_string(src) : "phi[" + std::to_string(k) + "]");
    Index power = src >= 0 ? k / input_dim + 1 : 1;
    out.push_back(power > 1 ? base + "^" + std::to_string(power) : base);
  }
  return out;
}

// Validation loss sum(yhat^2 - 2 y yhat). For the mean target this is the
// squared error minus sum(y^2), for the Riesz target it is the empirical Riesz
// loss, so one criterion serves both.
inline double select_lambda_cv(const Matrix& z, const Vector& y, const LinearSpec& spec, double lambda_scale) {
  const Index n = z.rows();
  const int k = std::min<int>(spec.cv_folds, static_cast<int>(n));
  if (k < 2 || n < 2 * static_cast<Index>(k) || spec.grid.empty()) {
    return (spec.grid.empty() ? 1e-4 : spec.grid.front()) * lambda_scale;
  }
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(spec.seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<Index>> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < perm.size(); ++i) folds[i % static_cast<std::size_t>(k)].push_back(perm[i]);

  const Matrix s_zz = z.transpose() * z;
  const Vector s_z = z.colwise().sum().transpose();
  const double s_y = y.sum();
  const Vector s_zy = z.transpose() * y;

  std::vector<double> loss(spec.grid.size(), 0.0);
  for (const auto& fold : folds) {
    Matrix zf = select_rows(z, fold);
    Vector yf = select_rows(y, fold);
    const double nt = static_cast<double>(n - static_cast<Index>(fold.size()));
    Vector mz = (s_z - zf.colwise().sum().transpose()) / nt;
    double my = (s_y - yf.sum()) / nt;
    Matrix c = (s_zz - zf.transpose() * zf) / nt - mz * mz.transpose();
    Vector rhs = (s_zy - zf.transpose() * yf) / nt - mz * my;
    for (std::size_t g = 0; g < spec.grid.size(); ++g) {
      Matrix a = c;
      a.diagonal().array() += spec.grid[g] * lambda_scale;
      Vector beta = a.ldlt().solve(rhs);
      Vector pred = ((zf.rowwise() - mz.transpose()) * beta).array() + my;
      loss[g] += (pred.array().square() - 2.0 * yf.array() * pred.array()).sum();
    }
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < loss.size(); ++g)
    if (loss[g] < loss[best]) best = g;
  return spec.grid[best] * lambda_scale;
}

inline LinearModel fit_linear(const Matrix& x, const Vector& y, const FeatureMap& map, const LinearSpec& spec,
                              Target target, const std::vector<std::string>& names) {
  check_finite(x, y, "fit_linear");
  LinearModel model;
  model.map = map;
  model.input_dim = x.cols();
  model.target = target;
  Matrix phi = map.apply(x);
  model.standardization = Standardization::fit(phi);
  Matrix z = model.standardization.apply(phi);
  const double n = static_cast<double>(z.rows());
  const double ybar = y.mean();
  Matrix gram = z.transpose() * z / n;
  Vector rhs = z.transpose() * (y.array() - ybar).matrix() / n;

  double lambda = 0.0;
  if (spec.lambda) {
    lambda = *spec.lambda;
    if (!(lambda >= 0.0)) throw ConfigError("fit_linear: lambda must be >= 0");
  } else {
    double scale = z.cols() > 0 ? gram.trace() / static_cast<double>(z.cols()) : 1.0;
    if (!(scale > 0.0)) scale = 1.0;
    lambda = select_lambda_cv(z, y, spec, scale);
  }
  model.ridge_lambda = lambda;
  model.coefficients = solve_ridge(gram, rhs, lambda, mapped_names(map, x.cols(), names));
  model.intercept = ybar;
  if (!model.coefficients.allFinite()) throw EstimationError("fit_linear: non-finite coefficients");
  return model;
}

}  // namespace detail

// Max-norm residual of (E_n[z z^T] + lambda I) beta - E_n[(y - ybar) z] on the
// standardized design.
inline double normal_equation_residual(const LinearModel& model, const Matrix& x, const Vector& y) {
  Matrix z = model.standardization.apply(model.map.apply(x));
  const double n = static_cast<double>(z.rows());
  Matrix gram = z.transpose() * z / n;
  gram.diagonal().array() += model.ridge_lambda;
  Vector rhs = z.transpose() * (y.array() - y.mean()).matrix() / n;
  return (gram * model.coefficients - rhs).cwiseAbs().maxCoeff();
}

// ---- Honest forest with local linear leaves --------------------------------

struct ForestSpec {
  int trees = 100;
  double honest_fraction = 0.5;  // share of each subsample used to place splits
  int min_leaf = 5;
  double subsample = 0.5;
  double leaf_ridge = 1e-6;
  int mtry = 0;  // features tried per split; 0 means all
  int max_depth = 64;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int leaf = -1;
};

// Local solution of E_n[(<phi, beta> - Y) phi | leaf] = 0, stored centered at
// the leaf mean of phi. An empty slope vector means the leaf fell back to the
// leaf mean.
struct Leaf {
  double intercept = 0.0;
  Vector center;
  Vector slope;
  std::size_t count = 0;
};

struct Tree {
  std::vector<TreeNode> nodes;
  std::vector<Leaf> leaves;
  std::vector<std::uint32_t> split_sample;
  std::vector<std::uint32_t> estimation_sample;

  template <typename Row>
  int find_leaf(const Row& row) const {
    int id = 0;
    while (nodes[static_cast<std::size_t>(id)].feature >= 0) {
      const auto& nd = nodes[static_cast<std::size_t>(id)];
      id = row(nd.feature) <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(id)].leaf;
  }
};

struct ForestModel {
  FeatureMap map;
  Index input_dim = 0;
  Standardization standardization;
  std::vector<Tree> trees;
  ForestSpec spec;
  Target target = Target::Mean;
  std::size_t degenerate_leaves = 0;

  Vector predict(const Matrix& x) const {
    if (x.cols() != input_dim) throw EstimationError("predict: feature dimension mismatch");
    Matrix z = standardization.apply(map.apply(x));
    Vector out = Vector::Zero(x.rows());
    for (const auto& tree : trees) {
      for (Index i = 0; i < x.rows(); ++i) {
        const Leaf& lf = tree.leaves[static_cast<std::size_t>(tree.find_leaf(x.row(i)))];
        double v = lf.intercept;
        if (lf.slope.size() > 0) v += (z.row(i).transpose() - lf.center).dot(lf.slope);
        out(i) += v;
      }
    }
    return out / static_cast<double>(std::max<std::size_t>(trees.size(), 1));
  }

  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    if (row.size() != input_dim) throw EstimationError("predict: row dimension mismatch");
    Matrix r = row;
    return predict(r)(0);
  }
};

namespace detail {

struct TreeBuilder {
  const Matrix& x;  // raw features, used for splitting
  const Matrix& z;  // standardized phi, used for leaf systems
  const Vector& y;
  const ForestSpec& spec;
  std::mt19937_64 rng;
  std::size_t degenerate = 0;

  Leaf fit_leaf(const std::vector<Index>& est) {
    Leaf lf;
    lf.count = est.size();
    const Index p = z.cols();
    double ybar = 0.0;
    for (Index i : est) ybar += y(i);
    ybar /= static_cast<double>(est.size());
    lf.intercept = ybar;
    if (static_cast<Index>(est.size()) < p + 2) {
      ++degenerate;
      return lf;
    }
    Matrix zl = select_rows(z, est);
    Vector center = zl.colwise().mean().transpose();
    zl.rowwise() -= center.transpose();
    const double c = static_cast<double>(est.size());
    Matrix gram = zl.transpose() * zl / c;
    Vector diag = gram.diagonal();
    if (diag.minCoeff() <= 1e-10) {  // a feature is constant inside the leaf
      ++degenerate;
      return lf;
    }
    Vector rhs = Vector::Zero(p);
    for (std::size_t r = 0; r < est.size(); ++r) rhs += zl.row(static_cast<Index>(r)).transpose() * (y(est[r]) - ybar);
    rhs /= c;
    gram.diagonal().array() += spec.leaf_ridge;
    lf.slope = gram.ldlt().solve(rhs);
    lf.center = center;
    if (!lf.slope.allFinite()) {
      ++degenerate;
      lf.slope.resize(0);
      lf.center.resize(0);
    }
    return lf;
  }

  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
  };

  Split best_split(const std::vector<Index>& split_idx, const std::vector<Index>& est_idx) {
    Split best;
    const Index d = x.cols();
    const std::size_t ns = split_idx.size();
    const auto min_leaf = static_cast<std::size_t>(std::max(1, spec.min_leaf));
    if (ns < 2 * min_leaf) return best;

    std::vector<Index> features(static_cast<std::size_t>(d));
    std::iota(features.begin(), features.end(), Index{0});
    std::size_t tries = spec.mtry <= 0 ? features.size() : std::min<std::size_t>(spec.mtry, features.size());
    for (std::size_t i = 0; i < tries; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, features.size() - 1);
      std::swap(features[i], features[pick(rng)]);
    }

    double total = 0.0;
    for (Index i : split_idx) total += y(i);
    const double base = total * total / static_cast<double>(ns);

    std::vector<std::pair<double, double>> sorted(ns);
    std::vector<double> est_vals(est_idx.size());
    for (std::size_t t = 0; t < tries; ++t) {
      const Index f = features[t];
      for (std::size_t i = 0; i < ns; ++i) sorted[i] = {x(split_idx[i], f), y(split_idx[i])};
      std::sort(sorted.begin(), sorted.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      for (std::size_t i = 0; i < est_idx.size(); ++i) est_vals[i] = x(est_idx[i], f);
      std::sort(est_vals.begin(), est_vals.end());
      double left = 0.0;
      for (std::size_t k = 1; k < ns; ++k) {
        left += sorted[k - 1].second;
        if (k < min_leaf || ns - k < min_leaf) continue;
        if (!(sorted[k - 1].first < sorted[k].first)) continue;
        const double right = total - left;
        const double gain = left * left / static_cast<double>(k) +
                            right * right / static_cast<double>(ns - k) - base;
        if (gain <= best.gain) continue;
        const double thr = 0.5 * (sorted[k - 1].first + sorted[k].first);
        auto est_left = static_cast<std::size_t>(
            std::upper_bound(est_vals.begin(), est_vals.end(), thr) - est_vals.begin());
        if (est_left == 0 || est_left == est_vals.size()) continue;
        best = {static_cast<int>(f), thr, gain};
      }
    }
    return best;
  }

  Tree grow(std::vector<Index> split_idx, std::vector<Index> est_idx) {
    Tree tree;
    tree.split_sample.assign(split_idx.begin(), split_idx.end());
    tree.estimation_sample.assign(est_idx.begin(), est_idx.end());
    struct Pending {
      int node;
      int depth;
      std::vector<Index> s, e;
    };
    tree.nodes.push_back({});
    std::vector<Pending> stack;
    stack.push_back({0, 0, std::move(split_idx), std::move(est_idx)});
    while (!stack.empty()) {
      Pending cur = std::move(stack.back());
      stack.pop_back();
      Split sp;
      if (cur.depth < spec.max_depth) sp = best_split(cur.s, cur.e);
      if (sp.feature < 0) {
        tree.nodes[static_cast<std::size_t>(cur.node)].leaf = static_cast<int>(tree.leaves.size());
        tree.leaves.push_back(fit_leaf(cur.e));
        continue;
      }
      Pending l{static_cast<int>(tree.nodes.size()), cur.depth + 1, {}, {}};
      Pending r{static_cast<int>(tree.nodes.size()) + 1, cur.depth + 1, {}, {}};
      tree.nodes.push_back({});
      tree.nodes.push_back({});
      auto& nd = tree.nodes[static_cast<std::size_t>(cur.node)];
      nd.feature = sp.feature;
      nd.threshold = sp.threshold;
      nd.left = l.node;
      nd.right = r.node;
      for (Index i : cur.s) (x(i, sp.feature) <= sp.threshold ? l.s : r.s).push_back(i);
      for (Index i : cur.e) (x(i, sp.feature) <= sp.threshold ? l.e : r.e).push_back(i);
      stack.push_back(std::move(r));
      stack.push_back(std::move(l));
    }
    return tree;
  }
};

inline ForestModel fit_forest_impl(const Matrix& x, const Vector& y, const FeatureMap& map, const ForestSpec& spec,
                                   Target target) {
  check_finite(x, y, "fit_forest");
  if (spec.trees < 1) throw ConfigError("fit_forest: need at least one tree");
  if (!(spec.subsample > 0.0 && spec.subsample <= 1.0)) throw ConfigError("fit_forest: subsample must be in (0,1]");
  if (!(spec.honest_fraction > 0.0 && spec.honest_fraction < 1.0))
    throw ConfigError("fit_forest: honest_fraction must be in (0,1)");
  const Index n = x.rows();
  const auto sub = static_cast<Index>(std::floor(spec.subsample * static_cast<double>(n)));
  const auto n_split = static_cast<Index>(std::floor(spec.honest_fraction * static_cast<double>(sub)));
  if (n_split < 1 || sub - n_split < 1) {
    throw EstimationError("fit_forest: " + std::to_string(n) +
                          " rows are too few for honest subsampling (need non-empty split and estimation halves)");
  }

  ForestModel model;
  model.map = map;
  model.input_dim = x.cols();
  model.spec = spec;
  model.target = target;
  Matrix phi = map.apply(x);
  model.standardization = Standardization::fit(phi);
  const Matrix z = model.standardization.apply(phi);
  model.trees.resize(static_cast<std::size_t>(spec.trees));
  std::vector<std::size_t> degenerate(static_cast<std::size_t>(spec.trees), 0);

  parallel_for(static_cast<std::size_t>(spec.trees), spec.threads, [&](std::size_t t) {
    TreeBuilder builder{x, z, y, spec, std::mt19937_64(derive_seed(spec.seed, t)), 0};
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    for (Index i = 0; i < sub; ++i) {  // partial Fisher-Yates: first `sub` entries
      std::uniform_int_distribution<Index> pick(i, n - 1);
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(builder.rng))]);
    }
    std::vector<Index> s(perm.begin(), perm.begin() + n_split);
    std::vector<Index> e(perm.begin() + n_split, perm.begin() + sub);
    model.trees[t] = builder.grow(std::move(s), std::move(e));
    degenerate[t] = builder.degenerate;
  });
  model.degenerate_leaves = std::accumulate(degenerate.begin(), degenerate.end(), std::size_t{0});
  return model;
}

}  // namespace detail

// ---- Predictors and learner specs ------------------------------------------

// Wraps an arbitrary function of the feature row; used for oracle or
// deliberately perturbed nuisances in tests and experiments.
struct FunctionModel {
  std::function<Vector(const Matrix&)> fn;
  Index input_dim = 0;

  Vector predict(const Matrix& x) const {
    if (x.cols() != input_dim) throw EstimationError("predict: feature dimension mismatch");
    return fn(x);
  }
};

using Predictor = std::variant<LinearModel, ForestModel, FunctionModel>;

inline Vector predict(const Predictor& model, const Matrix& x) {
  return std::visit([&](const auto& m) { return Vector(m.predict(x)); }, model);
}

inline double predict_row(const Predictor& model, const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  Matrix r = row;
  return predict(model, r)(0);
}

// How the Riesz learner is kept from sharing estimation error with the mean
// learner. For the moments used here both solve the same population problem,
// so fitting them on the same rows makes the second-order remainder
// -E[(alpha - alpha0)(g - g0)] equal to minus a squared error, which biases
// every theta downward by its own out-of-sample risk.
enum class NuisanceSplit {
  Shared,          // same rows, same random stream: alpha == g
  DistinctStreams, // same rows, independent CV folds / forest subsamples
  DisjointHalves,  // g and alpha fitted on disjoint random halves
};

inline const char* split_name(NuisanceSplit s) {
  switch (s) {
    case NuisanceSplit::Shared: return "shared";
    case NuisanceSplit::DistinctStreams: return "streams";
    case NuisanceSplit::DisjointHalves: return "halves";
  }
  return "halves";
}

inline NuisanceSplit parse_split(const std::string& s) {
  if (s == "shared") return NuisanceSplit::Shared;
  if (s == "streams") return NuisanceSplit::DistinctStreams;
  if (s == "halves") return NuisanceSplit::DisjointHalves;
  throw ConfigError("nuisance split: expected 'shared', 'streams' or 'halves', got '" + s + "'");
}

struct LearnerSpec {
  enum class Kind { Linear, Forest };
  Kind kind = Kind::Linear;
  FeatureMap map{};
  LinearSpec linear{};
  ForestSpec forest{};
  NuisanceSplit split = NuisanceSplit::DisjointHalves;

  std::string name() const { return kind == Kind::Linear ? "linear" : "forest"; }
};

inline LearnerSpec::Kind parse_learner(const std::string& s) {
  if (s == "linear") return LearnerSpec::Kind::Linear;
  if (s == "forest") return LearnerSpec::Kind::Forest;
  throw ConfigError("learner: expected 'linear' or 'forest', got '" + s + "'");
}

// Regularized least-squares fit of E[Y | X].
inline LinearModel fit_mean(const Matrix& x, const Vector& y, const FeatureMap& map, const LinearSpec& spec,
                            const std::vector<std::string>& names = {}) {
  return detail::fit_linear(x, y, map, spec, Target::Mean, names);
}

// Empirical minimizer of E[alpha(X)^2 - 2 m(V; alpha)] within the linear
// class, for the moments m(V; alpha) = Y alpha(X).
inline LinearModel fit_riesz(const Matrix& x, const Vector& y, Moment /*moment*/, const FeatureMap& map,
                             const LinearSpec& spec, const std::vector<std::string>& names = {}) {
  return detail::fit_linear(x, y, map, spec, Target::Riesz, names);
}

inline ForestModel fit_forest(const Matrix& x, const Vector& y, Target target, const FeatureMap& map,
                              const ForestSpec& spec) {
  return detail::fit_forest_impl(x, y, map, spec, target);
}

// Fitted (g, alpha) pair for one fold and one conditioning set.
struct NuisancePair {
  Predictor mean_model;
  Predictor riesz_model;
  std::vector<Index> target_columns;
};

inline NuisancePair fit_nuisance_pair(const Matrix& x, const Vector& y, const LearnerSpec& spec, Moment moment,
                                      std::uint64_t seed, std::vector<Index> columns,
                                      const std::vector<std::string>& names = {}) {
  const std::uint64_t mean_seed = derive_seed(seed, 1);
  const std::uint64_t riesz_seed = spec.split == NuisanceSplit::Shared ? mean_seed : derive_seed(seed, 2);

  auto fit_one = [&](const Matrix& xs, const Vector& ys, Target target, std::uint64_t s) -> Predictor {
    if (spec.kind == LearnerSpec::Kind::Linear) {
      LinearSpec ls = spec.linear;
      ls.seed = s;
      return target == Target::Mean ? fit_mean(xs, ys, spec.map, ls, names)
                                     : fit_riesz(xs, ys, moment, spec.map, ls, names);
    }
    ForestSpec fs = spec.forest;
    fs.seed = s;
    return fit_forest(xs, ys, target, spec.map, fs);
  };

  if (spec.split != NuisanceSplit::DisjointHalves) {
    return {fit_one(x, y, Target::Mean, mean_seed), fit_one(x, y, Target::Riesz, riesz_seed), std::move(columns)};
  }
  const Index n = x.rows();
  if (n < 4) throw EstimationError("fit_nuisance_pair: need at least 4 rows to split the training set");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(derive_seed(seed, 3));
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto half = static_cast<std::ptrdiff_t>(n / 2);
  std::vector<Index> a(perm.begin(), perm.begin() + half), b(perm.begin() + half, perm.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {fit_one(select_rows(x, a), select_rows(y, a), Target::Mean, mean_seed),
          fit_one(select_rows(x, b), select_rows(y, b), Target::Riesz, riesz_seed), std::move(columns)};
}

// ---- Serialization (versioned, for reproducibility only) --------------------

namespace detail {
inline nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
inline Vector json_vec(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Vector>(v.data(), static_cast<Index>(v.size()));
}
inline nlohmann::json std_json(const Standardization& s) {
  return {{"mean", vec_json(s.mean)}, {"scale", vec_json(s.scale)}, {"constant", s.constant}};
}
inline Standardization json_std(const nlohmann::json& j) {
  Standardization s;
  s.mean = json_vec(j.at("mean"));
  s.scale = json_vec(j.at("scale"));
  s.constant = j.at("constant").get<std::vector<bool>>();
  return s;
}
}  // namespace detail

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json model_to_json(const Predictor& model) {
  using detail::vec_json;
  if (const auto* lin = std::get_if<LinearModel>(&model)) {
    return {{"format_version", kModelFormatVersion},
            {"kind", "linear"},
            {"target", target_name(lin->target)},
            {"map", lin->map.id()},
            {"input_dim", lin->input_dim},
            {"coefficients", vec_json(lin->coefficients)},
            {"intercept", lin->intercept},
            {"ridge_lambda", lin->ridge_lambda},
            {"standardization", detail::std_json(lin->standardization)}};
  }
  if (const auto* forest = std::get_if<ForestModel>(&model)) {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : forest->trees) {
      nlohmann::json nodes = nlohmann::json::array();
      for (const auto& nd : t.nodes) nodes.push_back({nd.feature, nd.threshold, nd.left, nd.right, nd.leaf});
      nlohmann::json leaves = nlohmann::json::array();
      for (const auto& lf : t.leaves)
        leaves.push_back({{"intercept", lf.intercept},
                          {"center", vec_json(lf.center)},
                          {"slope", vec_json(lf.slope)},
                          {"count", lf.count}});
      trees.push_back({{"nodes", nodes}, {"leaves", leaves}});
    }
    return {{"format_version", kModelFormatVersion},
            {"kind", "forest"},
            {"target", target_name(forest->target)},
            {"map", forest->map.id()},
            {"input_dim", forest->input_dim},
            {"standardization", detail::std_json(forest->standardization)},
            {"min_leaf", forest->spec.min_leaf},
            {"honest_fraction", forest->spec.honest_fraction},
            {"subsample", forest->spec.subsample},
            {"leaf_ridge", forest->spec.leaf_ridge},
            {"trees", trees}};
  }
  throw Error("model_to_json: function-backed predictors cannot be serialized");
}

inline Predictor model_from_json(const nlohmann::json& j) {
  if (j.value("format_version", 0) != kModelFormatVersion) throw Error("model_from_json: unsupported format version");
  const std::string kind = j.at("kind").get<std::string>();
  const Target target = j.at("target").get<std::string>() == "riesz" ? Target::Riesz : Target::Mean;
  const std::string map_id = j.at("map").get<std::string>();
  if (map_id.rfind("custom:", 0) == 0) throw Error("model_from_json: custom feature maps are not serializable");
  if (kind == "linear") {
    LinearModel m;
    m.map = FeatureMap::parse(map_id);
    m.target = target;
    m.input_dim = j.at("input_dim").get<Index>();
    m.coefficients = detail::json_vec(j.at("coefficients"));
    m.intercept = j.at("intercept").get<double>();
    m.ridge_lambda = j.at("ridge_lambda").get<double>();
    m.standardization = detail::json_std(j.at("standardization"));
    return m;
  }
  if (kind == "forest") {
    ForestModel m;
    m.map = FeatureMap::parse(map_id);
    m.target = target;
    m.input_dim = j.at("input_dim").get<Index>();
    m.standardization = detail::json_std(j.at("standardization"));
    m.spec.min_leaf = j.at("min_leaf").get<int>();
    m.spec.honest_fraction = j.at("honest_fraction").get<double>();
    m.spec.subsample = j.at("subsample").get<double>();
    m.spec.leaf_ridge = j.at("leaf_ridge").get<double>();
    for (const auto& tj : j.at("trees")) {
      Tree t;
      for (const auto& nj : tj.at("nodes"))
        t.nodes.push_back({nj[0].get<int>(), nj[1].get<double>(), nj[2].get<int>(), nj[3].get<int>(), nj[4].get<int>()});
      for (const auto& lj : tj.at("leaves")) {
        Leaf lf;
        lf.intercept = lj.at("intercept").get<double>();
        lf.center = detail::json_vec(lj.at("center"));
        lf.slope = detail::json_vec(lj.at("slope"));
        lf.count = lj.at("count").get<std::size_t>();
        t.leaves.push_back(std::move(lf));
      }
      m.trees.push_back(std::move(t));
    }
    m.spec.trees = static_cast<int>(m.trees.size());
    return m;
  }
  throw Error("model_from_json: unknown model kind '" + kind + "'");
}

}  // namespace drcfs
