#pragma once

// Replicate sweeps: simulate -> select -> score for every cell of a grid.

#include "drcfs/common.hpp"
#include "drcfs/dgp.hpp"
#include "drcfs/drcfs.hpp"
#include "drcfs/io.hpp"
#include "drcfs/metrics.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace drcfs {

// ---- DRCFS parameters from JSON ---------------------------------------------

inline void apply_drcfs_json(DrcfsConfig& c, const nlohmann::json& j) {
  try {
    c.k = j.value("k", c.k);
    c.q = j.value("q", c.q);
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("convention")) c.convention = parse_convention(j.at("convention").get<std::string>());
    if (j.contains("threads")) c.threads = j.at("threads").get<unsigned>();
    if (j.contains("learner")) {
      const auto& l = j.at("learner");
      const std::string kind = l.is_string() ? l.get<std::string>() : l.value("kind", c.learner.name());
      c.learner.kind = parse_learner(kind);
      if (l.is_object()) {
        if (l.contains("map")) c.learner.map = FeatureMap::parse(l.at("map").get<std::string>());
        if (l.contains("split")) c.learner.split = parse_split(l.at("split").get<std::string>());
        if (l.contains("lambda")) c.learner.linear.lambda = l.at("lambda").get<double>();
        c.learner.forest.trees = l.value("trees", c.learner.forest.trees);
        c.learner.forest.min_leaf = l.value("min_leaf", c.learner.forest.min_leaf);
        c.learner.forest.subsample = l.value("subsample", c.learner.forest.subsample);
        c.learner.forest.honest_fraction = l.value("honest_fraction", c.learner.forest.honest_fraction);
      }
    }
    if (j.contains("map")) c.learner.map = FeatureMap::parse(j.at("map").get<std::string>());
    if (j.contains("split")) c.learner.split = parse_split(j.at("split").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("drcfs config: ") + e.what());
  }
  if (c.k < 2) throw ConfigError("k must be >= 2");
  if (!(c.q > 0.0 && c.q <= 1.0)) throw ConfigError("q must lie in (0,1]");
}

inline nlohmann::json drcfs_config_json(const DrcfsConfig& c) {
  return {{"k", c.k},
          {"q", c.q},
          {"seed", c.seed},
          {"convention", convention_name(c.convention)},
          {"learner", learner_json(c.learner)}};
}

// ---- Sweep -----------------------------------------------------------------

struct BenchmarkConfig {
  std::vector<int> m{10};
  std::vector<int> n{2000};
  std::vector<double> p_c{0.3};
  std::vector<double> p_h{0.0};
  std::vector<nlohmann::json> mixture{nlohmann::json("f1")};
  std::vector<nlohmann::json> noise{nlohmann::json("normal")};
  bool allow_hidden_parents = false;
  int replicates = 5;
  std::uint64_t seed = 0;
  DrcfsConfig drcfs{};
  unsigned threads = 1;
  bool include_timing = true;
};

namespace detail {

template <class T>
std::vector<T> scalar_or_list(const nlohmann::json& j, const char* key, std::vector<T> fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  std::vector<T> out;
  if (v.is_array()) {
    for (const auto& x : v) out.push_back(x.get<T>());
  } else {
    out.push_back(v.get<T>());
  }
  if (out.empty()) throw ConfigError(std::string("benchmark grid: '") + key + "' is empty");
  return out;
}

// A mixture may be a string, a single component list, or a list of those.
inline std::vector<nlohmann::json> mixture_list(const nlohmann::json& v) {
  if (v.is_string()) return {v};
  if (v.is_array() && !v.empty() && v.front().is_object()) return {v};
  std::vector<nlohmann::json> out(v.begin(), v.end());
  if (out.empty()) throw ConfigError("benchmark grid: 'mixture' is empty");
  return out;
}

}  // namespace detail

inline BenchmarkConfig benchmark_from_json(const nlohmann::json& j) {
  BenchmarkConfig b;
  try {
    const nlohmann::json& grid = j.contains("grid") ? j.at("grid") : j;
    b.m = detail::scalar_or_list<int>(grid, "m", b.m);
    b.n = detail::scalar_or_list<int>(grid, "n", b.n);
    b.p_c = detail::scalar_or_list<double>(grid, "p_c", b.p_c);
    b.p_h = detail::scalar_or_list<double>(grid, "p_h", b.p_h);
    if (grid.contains("mixture")) b.mixture = detail::mixture_list(grid.at("mixture"));
    if (grid.contains("noise")) {
      const auto& v = grid.at("noise");
      b.noise = v.is_array() ? std::vector<nlohmann::json>(v.begin(), v.end()) : std::vector<nlohmann::json>{v};
    }
    b.allow_hidden_parents = j.value("allow_hidden_parents", b.allow_hidden_parents);
    b.replicates = j.value("replicates", b.replicates);
    if (j.contains("seed")) b.seed = j.at("seed").get<std::uint64_t>();
    b.threads = j.value("threads", b.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("benchmark config: ") + e.what());
  }
  apply_drcfs_json(b.drcfs, j.contains("drcfs") ? j.at("drcfs") : j);
  if (b.replicates < 1) throw ConfigError("benchmark: replicates must be >= 1");
  return b;
}

struct BenchmarkCell {
  DgpConfig dgp;  // seed unset; each replicate supplies its own
  nlohmann::json key;
  std::string hash;
};

inline std::vector<BenchmarkCell> expand_grid(const BenchmarkConfig& b) {
  std::vector<BenchmarkCell> cells;
  for (int m : b.m)
    for (int n : b.n)
      for (double pc : b.p_c)
        for (double ph : b.p_h)
          for (const auto& mix : b.mixture)
            for (const auto& nz : b.noise) {
              BenchmarkCell c;
              c.dgp.m = m;
              c.dgp.n = n;
              c.dgp.p_c = pc;
              c.dgp.p_h = ph;
              c.dgp.mixture = mixture_from_json(mix);
              c.dgp.noise = noise_from_json(nz);
              c.dgp.allow_hidden_parents = b.allow_hidden_parents;
              c.dgp.validate();
              nlohmann::json dj = to_json(c.dgp);
              dj.erase("seed");
              DrcfsConfig dc = b.drcfs;
              dc.seed = 0;
              nlohmann::json rj = drcfs_config_json(dc);
              rj.erase("seed");
              c.key = {{"dgp", dj}, {"drcfs", rj}};
              char buf[17];
              std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(c.key.dump())));
              c.hash = buf;
              cells.push_back(std::move(c));
            }
  return cells;
}

struct ReplicateRow {
  std::size_t cell = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  SelectionMetrics metrics;
  double wall_ms = 0.0;
  std::vector<std::string> observed_nodes;
  std::vector<bool> selected;
  std::vector<bool> truth;
};

struct CellSummary {
  std::size_t ok = 0;
  std::size_t failed = 0;
  double acc = 0, f1 = 0, csi = 0, wall_ms = 0;
  double acc_se = 0, f1_se = 0, csi_se = 0;
};

struct BenchmarkResult {
  std::vector<BenchmarkCell> cells;
  std::vector<ReplicateRow> rows;  // cell-major, replicate order
  std::vector<CellSummary> summaries;

  bool any_cell_wholly_failed() const {
    for (const auto& s : summaries)
      if (s.ok == 0) return true;
    return false;
  }
};

// Replicate r of every cell uses seed (base xor r) for the simulator and a
// seed derived from it for the selection, whatever the worker count.
inline std::uint64_t replicate_seed(std::uint64_t base, int r) { return base ^ static_cast<std::uint64_t>(r); }

inline BenchmarkResult run_benchmark(const BenchmarkConfig& b) {
  BenchmarkResult out;
  out.cells = expand_grid(b);
  const std::size_t reps = static_cast<std::size_t>(b.replicates);
  out.rows.resize(out.cells.size() * reps);
  parallel_for(out.rows.size(), std::max(1u, b.threads), [&](std::size_t t) {
    ReplicateRow& row = out.rows[t];
    row.cell = t / reps;
    row.seed = replicate_seed(b.seed, static_cast<int>(t % reps));
    const auto start = std::chrono::steady_clock::now();
    try {
      DgpConfig dgp = out.cells[row.cell].dgp;
      dgp.seed = row.seed;
      const SimulatedDataset ds = simulate_dataset(dgp);
      for (auto node : ds.column_nodes) row.observed_nodes.push_back(node_name(node, ds.graph.feature_count()));
      DrcfsConfig dc = b.drcfs;
      dc.seed = derive_seed(row.seed, 0x73656c656374ULL);
      dc.threads = 1;
      const SelectionReport rep = run_drcfs(Dataset{ds.features, ds.outcome, ds.column_names}, dc);
      row.selected = rep.selected_mask();
      row.truth = ds.observed_parent_mask;
      row.metrics = score_selection(row.selected, row.truth);
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (!b.include_timing) row.wall_ms = 0.0;
  });

  out.summaries.resize(out.cells.size());
  for (std::size_t c = 0; c < out.cells.size(); ++c) {
    auto& s = out.summaries[c];
    std::vector<double> a, f, k;
    for (std::size_t r = 0; r < reps; ++r) {
      const auto& row = out.rows[c * reps + r];
      if (!row.ok) {
        ++s.failed;
        continue;
      }
      ++s.ok;
      a.push_back(row.metrics.acc);
      f.push_back(row.metrics.f1);
      k.push_back(row.metrics.csi);
      s.wall_ms += row.wall_ms;
    }
    auto mean_se = [](const std::vector<double>& v, double& mean, double& se) {
      if (v.empty()) return;
      mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      if (v.size() < 2) return;
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    };
    mean_se(a, s.acc, s.acc_se);
    mean_se(f, s.f1, s.f1_se);
    mean_se(k, s.csi, s.csi_se);
    if (s.ok > 0) s.wall_ms /= static_cast<double>(s.ok);
  }
  return out;
}

// ---- Output ----------------------------------------------------------------

// Column order: config_hash, seed, m, n, p_c, p_h, learner, acc, f1, csi,
// wall_ms, status. Each cell ends with a summary row whose seed field reads
// "summary" and whose metrics are replicate means.
inline std::string metrics_csv(const BenchmarkResult& res, const BenchmarkConfig& b) {
  using io::format_double;
  std::ostringstream os;
  os << "config_hash,seed,m,n,p_c,p_h,learner,acc,f1,csi,wall_ms,status\n";
  const std::size_t reps = static_cast<std::size_t>(b.replicates);
  const std::string learner = b.drcfs.learner.name();
  for (std::size_t c = 0; c < res.cells.size(); ++c) {
    const auto& cell = res.cells[c];
    auto prefix = [&](const std::string& seed) {
      os << cell.hash << ',' << seed << ',' << cell.dgp.m << ',' << cell.dgp.n << ',' << format_double(cell.dgp.p_c)
         << ',' << format_double(cell.dgp.p_h) << ',' << learner << ',';
    };
    for (std::size_t r = 0; r < reps; ++r) {
      const auto& row = res.rows[c * reps + r];
      prefix(std::to_string(row.seed));
      if (row.ok) {
        os << format_double(row.metrics.acc) << ',' << format_double(row.metrics.f1) << ','
           << format_double(row.metrics.csi) << ',' << format_double(row.wall_ms) << ",ok\n";
      } else {
        os << ",,," << format_double(row.wall_ms) << ',' << io::quote_field("error: " + row.error) << '\n';
      }
    }
    const auto& s = res.summaries[c];
    prefix("summary");
    if (s.ok > 0) {
      os << format_double(s.acc) << ',' << format_double(s.f1) << ',' << format_double(s.csi) << ','
         << format_double(s.wall_ms);
    } else {
      os << ",,,";
    }
    os << ",ok " << s.ok << '/' << reps << '\n';
  }
  return os.str();
}

// Fraction of successful replicates in which each graph node was selected,
// next to how often it was observed and how often it was a parent.
inline std::string selection_freq_csv(const BenchmarkResult& res, const BenchmarkConfig& b) {
  std::ostringstream os;
  os << "config_hash,node,observed,parent,selected,replicates,frequency\n";
  const std::size_t reps = static_cast<std::size_t>(b.replicates);
  for (std::size_t c = 0; c < res.cells.size(); ++c) {
    struct Count {
      int observed = 0, parent = 0, selected = 0;
    };
    std::vector<Count> counts(static_cast<std::size_t>(res.cells[c].dgp.m));
    int ok = 0;
    for (std::size_t r = 0; r < reps; ++r) {
      const auto& row = res.rows[c * reps + r];
      if (!row.ok) continue;
      ++ok;
      for (std::size_t k = 0; k < row.observed_nodes.size(); ++k) {
        const auto node = static_cast<std::size_t>(std::stoul(row.observed_nodes[k].substr(1)) - 1);
        ++counts[node].observed;
        counts[node].parent += row.truth[k];
        counts[node].selected += row.selected[k];
      }
    }
    for (std::size_t v = 0; v < counts.size(); ++v) {
      os << res.cells[c].hash << ",X" << v + 1 << ',' << counts[v].observed << ',' << counts[v].parent << ','
         << counts[v].selected << ',' << ok << ','
         << io::format_double(ok > 0 ? static_cast<double>(counts[v].selected) / ok : 0.0) << '\n';
    }
  }
  return os.str();
}

inline nlohmann::json summary_json(const BenchmarkResult& res, const BenchmarkConfig& b) {
  nlohmann::json cells = nlohmann::json::array();
  const std::size_t reps = static_cast<std::size_t>(b.replicates);
  for (std::size_t c = 0; c < res.cells.size(); ++c) {
    const auto& s = res.summaries[c];
    nlohmann::json failures = nlohmann::json::array();
    for (std::size_t r = 0; r < reps; ++r) {
      const auto& row = res.rows[c * reps + r];
      if (!row.ok) failures.push_back({{"seed", row.seed}, {"error", row.error}});
    }
    cells.push_back({{"config_hash", res.cells[c].hash},
                     {"config", res.cells[c].key},
                     {"replicates", reps},
                     {"succeeded", s.ok},
                     {"failed", s.failed},
                     {"acc", {{"mean", s.acc}, {"se", s.acc_se}}},
                     {"f1", {{"mean", s.f1}, {"se", s.f1_se}}},
                     {"csi", {{"mean", s.csi}, {"se", s.csi_se}}},
                     {"wall_ms_mean", s.wall_ms},
                     {"failures", failures}});
  }
  return {{"tool", "drcfs"},
          {"version", kVersion},
          {"seed", b.seed},
          {"replicates", b.replicates},
          {"drcfs", drcfs_config_json(b.drcfs)},
          {"cells", cells}};
}

}  // namespace drcfs
