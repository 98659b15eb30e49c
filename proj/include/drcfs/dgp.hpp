#pragma once

// Random DAG sampling and additive-noise data simulation.
//
// Node ids 0..m-1 are features, node m is the outcome. The outcome is always
// last in the topological order, so it never has children.

#include "drcfs/common.hpp"
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace drcfs {

enum class Transform { Linear = 1, SumSqrt, SumSine, SumTanh, GeometricMean, LogSumExp, SqrtSum };

struct TransformParams {
  double a = 0.5;
  double b = 0.0;
  double c = 0.0;
};

inline TransformParams default_params(Transform f) {
  switch (f) {
    case Transform::Linear: return {0.5, 0.0, 0.0};
    case Transform::SumSqrt: return {0.5, 0.0, 0.0};
    case Transform::SumSine: return {1.0, 0.0, 0.5};
    case Transform::SumTanh: return {1.0, 0.0, 2.0};
    case Transform::GeometricMean: return {3.0, 0.1, 0.0};
    case Transform::LogSumExp: return {1.0, std::log(2.0), 0.0};
    case Transform::SqrtSum: return {1.0, 0.0, 0.0};
  }
  return {};
}

inline std::string transform_name(Transform f) {
  return "f" + std::to_string(static_cast<int>(f));
}

inline Transform parse_transform(const std::string& s) {
  static const std::pair<const char*, Transform> names[] = {
      {"linear", Transform::Linear},       {"sum-sqrt", Transform::SumSqrt},
      {"sum-sine", Transform::SumSine},    {"sum-tanh", Transform::SumTanh},
      {"geometric-mean", Transform::GeometricMean}, {"log-sum-exp", Transform::LogSumExp},
      {"sqrt-sum", Transform::SqrtSum}};
  if (s.size() == 2 && s[0] == 'f' && s[1] >= '1' && s[1] <= '7') {
    return static_cast<Transform>(s[1] - '0');
  }
  for (const auto& [name, f] : names) {
    if (s == name) return f;
  }
  throw ConfigError("unknown transform family '" + s + "' (expected f1..f7)");
}

// Evaluates a transform family on the values of a node's direct causes.
// Every family maps the empty parent list to b.
inline double eval_transform(Transform f, const TransformParams& p, std::span<const double> parents) {
  if (parents.empty()) return p.b;
  switch (f) {
    case Transform::Linear: {
      double s = 0.0;
      for (double v : parents) s += v;
      return p.a * s + p.b;
    }
    case Transform::SumSqrt: {
      double s = 0.0;
      for (double v : parents) s += std::sqrt(std::abs(v));
      return p.a * s + p.b;
    }
    case Transform::SumSine: {
      double s = 0.0;
      for (double v : parents) s += std::sin(p.c * v);
      return p.a * s + p.b;
    }
    case Transform::SumTanh: {
      double s = 0.0;
      for (double v : parents) s += std::tanh(p.c * v);
      return p.a * s + p.b;
    }
    case Transform::GeometricMean: {
      // (prod |x|)^(1/card) evaluated in log space.
      double log_sum = 0.0;
      for (double v : parents) {
        if (v == 0.0) return p.b;
        log_sum += std::log(std::abs(v));
      }
      return p.a * std::exp(log_sum / static_cast<double>(parents.size())) + p.b;
    }
    case Transform::LogSumExp: {
      double mx = *std::max_element(parents.begin(), parents.end());
      double s = 0.0;
      for (double v : parents) s += std::exp(v - mx);
      return p.a * (mx + std::log(s)) + p.b;
    }
    case Transform::SqrtSum: {
      double s = 0.0;
      for (double v : parents) s += v;
      return p.a * std::sqrt(std::abs(s)) + p.b;
    }
  }
  return p.b;
}

struct MixtureComponent {
  Transform family = Transform::Linear;
  double weight = 1.0;
  TransformParams params = default_params(Transform::Linear);
};

// loc + scale * base, where base is N(0,1) or Beta(alpha, beta).
struct NoiseSpec {
  enum class Kind { Normal, Beta };
  Kind kind = Kind::Normal;
  double alpha = 2.0;
  double beta = 5.0;
  double loc = 0.0;
  double scale = 1.0;

  template <typename Rng>
  double sample(Rng& rng) const {
    double base = 0.0;
    if (kind == Kind::Normal) {
      base = std::normal_distribution<double>(0.0, 1.0)(rng);
    } else {
      double x = std::gamma_distribution<double>(alpha, 1.0)(rng);
      double y = std::gamma_distribution<double>(beta, 1.0)(rng);
      base = x / (x + y);
    }
    return loc + scale * base;
  }
};

struct DgpConfig {
  int m = 10;
  int n = 1000;
  double p_c = 0.3;
  double p_h = 0.0;
  std::vector<MixtureComponent> mixture{MixtureComponent{}};
  NoiseSpec noise{};
  std::uint64_t seed = 0;
  bool allow_hidden_parents = false;

  void validate() const {
    if (m < 1) throw ConfigError("dgp: m must be >= 1");
    if (n < 1) throw ConfigError("dgp: n must be >= 1");
    if (!(p_c >= 0.0 && p_c <= 1.0)) throw ConfigError("dgp: p_c must lie in [0,1]");
    if (!(p_h >= 0.0 && p_h <= 1.0)) throw ConfigError("dgp: p_h must lie in [0,1]");
    if (mixture.empty()) throw ConfigError("dgp: transform mixture is empty");
    double total = 0.0;
    for (const auto& c : mixture) {
      if (!(c.weight >= 0.0)) throw ConfigError("dgp: mixture weights must be >= 0");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ConfigError("dgp: mixture weights sum to " + std::to_string(total) + ", expected 1");
    }
    if (noise.kind == NoiseSpec::Kind::Beta && !(noise.alpha > 0.0 && noise.beta > 0.0)) {
      throw ConfigError("dgp: beta noise needs alpha, beta > 0");
    }
  }
};

struct NodeTransform {
  Transform family = Transform::Linear;
  TransformParams params{};
};

struct Edge {
  std::size_t from = 0;
  std::size_t to = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

class CausalGraph {
 public:
  CausalGraph() = default;

  // Empty graph over m features plus the outcome; identity topological order
  // with the outcome last.
  explicit CausalGraph(std::size_t feature_count)
      : parents_(feature_count + 1),
        children_(feature_count + 1),
        hidden_(feature_count + 1, false),
        transforms_(feature_count + 1) {
    order_.resize(feature_count + 1);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }

  // Builds a graph from an explicit edge list. Throws if the result is
  // cyclic or the outcome has children.
  static CausalGraph from_edges(std::size_t feature_count, const std::vector<Edge>& edges) {
    CausalGraph g(feature_count);
    for (const auto& e : edges) g.add_edge(e.from, e.to);
    if (!g.outcome_children().empty()) throw ConfigError("graph: outcome node must have no children");
    auto order = g.compute_topological_order();
    if (!order) throw ConfigError("graph: edge list contains a cycle");
    g.order_ = *order;
    return g;
  }

  std::size_t node_count() const { return parents_.size(); }
  std::size_t feature_count() const { return parents_.size() - 1; }
  std::size_t outcome_index() const { return parents_.size() - 1; }

  const std::vector<std::size_t>& parents(std::size_t node) const { return parents_.at(node); }
  const std::vector<std::size_t>& children(std::size_t node) const { return children_.at(node); }
  const std::vector<std::size_t>& topological_order() const { return order_; }
  const std::vector<bool>& hidden() const { return hidden_; }
  bool is_hidden(std::size_t node) const { return hidden_.at(node); }
  const NodeTransform& transform(std::size_t node) const { return transforms_.at(node); }

  bool has_edge(std::size_t from, std::size_t to) const {
    const auto& c = children_.at(from);
    return std::find(c.begin(), c.end(), to) != c.end();
  }

  std::vector<std::size_t> outcome_children() const { return children_.back(); }

  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    for (std::size_t u = 0; u < children_.size(); ++u) {
      for (std::size_t v : children_[u]) out.push_back({u, v});
    }
    std::sort(out.begin(), out.end(), [](const Edge& a, const Edge& b) {
      return a.from != b.from ? a.from < b.from : a.to < b.to;
    });
    return out;
  }

  std::size_t edge_count() const {
    std::size_t k = 0;
    for (const auto& c : children_) k += c.size();
    return k;
  }

  // Kahn's algorithm; nullopt when a cycle exists.
  std::optional<std::vector<std::size_t>> compute_topological_order() const {
    std::vector<std::size_t> indeg(node_count(), 0);
    for (std::size_t v = 0; v < node_count(); ++v) indeg[v] = parents_[v].size();
    std::vector<std::size_t> queue, out;
    for (std::size_t v = 0; v < node_count(); ++v)
      if (indeg[v] == 0) queue.push_back(v);
    std::size_t head = 0;
    while (head < queue.size()) {
      std::size_t u = queue[head++];
      out.push_back(u);
      for (std::size_t v : children_[u])
        if (--indeg[v] == 0) queue.push_back(v);
    }
    if (out.size() != node_count()) return std::nullopt;
    return out;
  }

  bool is_acyclic() const { return compute_topological_order().has_value(); }

  // True when every edge points forward in the stored order.
  bool order_is_consistent() const {
    std::vector<std::size_t> pos(node_count());
    for (std::size_t i = 0; i < order_.size(); ++i) pos[order_[i]] = i;
    for (const auto& e : edges())
      if (pos[e.from] >= pos[e.to]) return false;
    return true;
  }

  void add_edge(std::size_t from, std::size_t to) {
    if (from >= node_count() || to >= node_count() || from == to) {
      throw ConfigError("graph: invalid edge " + std::to_string(from) + " -> " + std::to_string(to));
    }
    if (has_edge(from, to)) return;
    children_[from].push_back(to);
    parents_[to].push_back(from);
    std::sort(children_[from].begin(), children_[from].end());
    std::sort(parents_[to].begin(), parents_[to].end());
  }

  void set_order(std::vector<std::size_t> order) { order_ = std::move(order); }
  void set_hidden(std::size_t node, bool h) { hidden_.at(node) = h; }
  void set_transform(std::size_t node, NodeTransform t) { transforms_.at(node) = t; }

 private:
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::vector<std::size_t>> children_;
  std::vector<std::size_t> order_;
  std::vector<bool> hidden_;
  std::vector<NodeTransform> transforms_;
};

struct SimulatedDataset {
  Matrix features;                         // n x (observed feature count)
  Vector outcome;                          // length n
  Vector outcome_noise;                    // the outcome's additive noise draws
  std::vector<bool> observed_parent_mask;  // per observed column
  CausalGraph graph;
  std::vector<std::string> column_names;   // X1..Xk after renumbering
  std::vector<std::size_t> column_nodes;   // original graph node id per column
};

inline std::string node_name(std::size_t node, std::size_t feature_count) {
  return node == feature_count ? std::string("Y") : "X" + std::to_string(node + 1);
}

// Uniform [0,1) from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline NodeTransform draw_transform(const std::vector<MixtureComponent>& mixture, double u) {
  double acc = 0.0;
  for (const auto& c : mixture) {
    acc += c.weight;
    if (u < acc) return {c.family, c.params};
  }
  // u within rounding of 1: take the last component with positive weight.
  for (auto it = mixture.rbegin(); it != mixture.rend(); ++it)
    if (it->weight > 0.0) return {it->family, it->params};
  return {mixture.back().family, mixture.back().params};
}

// Samples a random DAG: permutes the features, places the outcome last, adds
// each forward edge independently with probability p_c, and draws one
// transform per node from the mixture.
inline CausalGraph sample_graph(const DgpConfig& config, std::mt19937_64& rng) {
  config.validate();
  const auto m = static_cast<std::size_t>(config.m);
  CausalGraph g(m);

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = m; i > 1; --i) {  // Fisher-Yates with the portable uniform
    auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  order.push_back(m);

  for (std::size_t a = 0; a < order.size(); ++a) {
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      if (uniform01(rng) < config.p_c) g.add_edge(order[a], order[b]);
    }
  }
  g.set_order(order);
  for (std::size_t v = 0; v <= m; ++v) g.set_transform(v, draw_transform(config.mixture, uniform01(rng)));
  return g;
}

inline std::vector<bool> ground_truth_parents(const CausalGraph& graph,
                                              const std::vector<std::size_t>& observed_nodes) {
  std::vector<bool> mask;
  mask.reserve(observed_nodes.size());
  for (std::size_t node : observed_nodes) mask.push_back(graph.has_edge(node, graph.outcome_index()));
  return mask;
}

// Samples values in topological order (every node gets independent additive
// noise), then hides each feature with probability p_h. Parents of the outcome
// are exempt from hiding unless allow_hidden_parents is set. Hidden nodes still
// feed their children; they are only dropped from the feature matrix.
//
// The random stream is consumed in a fixed pattern independent of p_c and p_h,
// so configs that differ only in p_h share graph, values and hiding draws.
inline SimulatedDataset simulate_dataset(const DgpConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  CausalGraph graph = sample_graph(config, rng);
  const auto m = static_cast<std::size_t>(config.m);
  const auto n = static_cast<Index>(config.n);
  const std::size_t outcome = graph.outcome_index();

  Matrix values(n, static_cast<Index>(m + 1));
  Vector outcome_noise(n);
  std::vector<double> pa;
  for (std::size_t node : graph.topological_order()) {
    const auto& parents = graph.parents(node);
    const auto& tf = graph.transform(node);
    for (Index i = 0; i < n; ++i) {
      pa.clear();
      for (std::size_t p : parents) pa.push_back(values(i, static_cast<Index>(p)));
      double eps = config.noise.sample(rng);
      double v = eval_transform(tf.family, tf.params, pa) + eps;
      if (!std::isfinite(v)) {
        throw ConfigError("dgp: transform " + transform_name(tf.family) + " produced a non-finite value at node " +
                          node_name(node, m) + ", row " + std::to_string(i));
      }
      values(i, static_cast<Index>(node)) = v;
      if (node == outcome) outcome_noise(i) = eps;
    }
  }

  for (std::size_t v = 0; v < m; ++v) {
    double u = uniform01(rng);
    bool exempt = !config.allow_hidden_parents && graph.has_edge(v, outcome);
    graph.set_hidden(v, u < config.p_h && !exempt);
  }

  SimulatedDataset ds;
  for (std::size_t v = 0; v < m; ++v)
    if (!graph.is_hidden(v)) ds.column_nodes.push_back(v);
  ds.features.resize(n, static_cast<Index>(ds.column_nodes.size()));
  for (std::size_t c = 0; c < ds.column_nodes.size(); ++c) {
    ds.features.col(static_cast<Index>(c)) = values.col(static_cast<Index>(ds.column_nodes[c]));
    ds.column_names.push_back("X" + std::to_string(c + 1));
  }
  ds.outcome = values.col(static_cast<Index>(outcome));
  ds.outcome_noise = std::move(outcome_noise);
  ds.observed_parent_mask = ground_truth_parents(graph, ds.column_nodes);
  ds.graph = std::move(graph);
  return ds;
}

// ---- JSON ------------------------------------------------------------------

inline nlohmann::json to_json(const DgpConfig& c) {
  nlohmann::json mix = nlohmann::json::array();
  for (const auto& comp : c.mixture) {
    mix.push_back({{"family", transform_name(comp.family)},
                   {"weight", comp.weight},
                   {"a", comp.params.a},
                   {"b", comp.params.b},
                   {"c", comp.params.c}});
  }
  nlohmann::json noise = {{"type", c.noise.kind == NoiseSpec::Kind::Normal ? "normal" : "beta"},
                          {"loc", c.noise.loc},
                          {"scale", c.noise.scale}};
  if (c.noise.kind == NoiseSpec::Kind::Beta) {
    noise["alpha"] = c.noise.alpha;
    noise["beta"] = c.noise.beta;
  }
  return {{"m", c.m},       {"n", c.n},         {"p_c", c.p_c},
          {"p_h", c.p_h},   {"mixture", mix},   {"noise", noise},
          {"seed", c.seed}, {"allow_hidden_parents", c.allow_hidden_parents}};
}

inline NoiseSpec noise_from_json(const nlohmann::json& j) {
  NoiseSpec s;
  if (j.is_string()) {
    // Shorthand: "normal" or "beta(2,5)".
    std::string t = j.get<std::string>();
    if (t == "normal") return s;
    double a = 0, b = 0;
    if (std::sscanf(t.c_str(), "beta(%lf,%lf)", &a, &b) == 2) {
      s.kind = NoiseSpec::Kind::Beta;
      s.alpha = a;
      s.beta = b;
      return s;
    }
    throw ConfigError("dgp: unknown noise '" + t + "'");
  }
  std::string type = j.value("type", "normal");
  if (type == "beta") {
    s.kind = NoiseSpec::Kind::Beta;
  } else if (type != "normal") {
    throw ConfigError("dgp: unknown noise type '" + type + "'");
  }
  s.alpha = j.value("alpha", s.alpha);
  s.beta = j.value("beta", s.beta);
  s.loc = j.value("loc", s.loc);
  s.scale = j.value("scale", s.scale);
  return s;
}

inline std::vector<MixtureComponent> mixture_from_json(const nlohmann::json& j) {
  std::vector<MixtureComponent> out;
  if (j.is_string()) {  // single family with probability 1
    Transform f = parse_transform(j.get<std::string>());
    out.push_back({f, 1.0, default_params(f)});
    return out;
  }
  for (const auto& item : j) {
    MixtureComponent comp;
    comp.family = parse_transform(item.at("family").get<std::string>());
    comp.params = default_params(comp.family);
    comp.weight = item.value("weight", 1.0);
    comp.params.a = item.value("a", comp.params.a);
    comp.params.b = item.value("b", comp.params.b);
    comp.params.c = item.value("c", comp.params.c);
    out.push_back(comp);
  }
  return out;
}

inline DgpConfig dgp_from_json(const nlohmann::json& j) {
  DgpConfig c;
  try {
    c.m = j.value("m", c.m);
    c.n = j.value("n", c.n);
    c.p_c = j.value("p_c", c.p_c);
    c.p_h = j.value("p_h", c.p_h);
    if (j.contains("mixture")) c.mixture = mixture_from_json(j.at("mixture"));
    if (j.contains("noise")) c.noise = noise_from_json(j.at("noise"));
    c.seed = j.value("seed", c.seed);
    c.allow_hidden_parents = j.value("allow_hidden_parents", c.allow_hidden_parents);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dgp config: ") + e.what());
  }
  c.validate();
  return c;
}

// Ground-truth sidecar: parents, full edge list, hidden node ids, column map
// and the generating config.
inline nlohmann::json ground_truth_json(const SimulatedDataset& ds, const DgpConfig& config) {
  const std::size_t m = ds.graph.feature_count();
  nlohmann::json parents = nlohmann::json::array();
  for (std::size_t c = 0; c < ds.column_names.size(); ++c)
    if (ds.observed_parent_mask[c]) parents.push_back(ds.column_names[c]);
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : ds.graph.edges()) edges.push_back({e.from, e.to});
  nlohmann::json hidden = nlohmann::json::array();
  for (std::size_t v = 0; v < m; ++v)
    if (ds.graph.is_hidden(v)) hidden.push_back(v);
  nlohmann::json columns = nlohmann::json::object();
  for (std::size_t c = 0; c < ds.column_names.size(); ++c) columns[ds.column_names[c]] = ds.column_nodes[c];
  nlohmann::json transforms = nlohmann::json::array();
  for (std::size_t v = 0; v <= m; ++v) transforms.push_back(transform_name(ds.graph.transform(v).family));
  return {{"parents", parents},
          {"graph", edges},
          {"hidden", hidden},
          {"outcome_node", ds.graph.outcome_index()},
          {"topological_order", ds.graph.topological_order()},
          {"transforms", transforms},
          {"column_map", columns},
          {"config", to_json(config)}};
}

}  // namespace drcfs
