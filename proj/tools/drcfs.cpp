#include "drcfs/benchmark.hpp"
#include "drcfs/dgp.hpp"
#include "drcfs/drcfs.hpp"
#include "drcfs/io.hpp"
#include "drcfs/oracle.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

namespace {

enum Exit { kOk = 0, kConfig = 2, kIngest = 3, kEstimation = 4, kBenchmark = 5 };

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  int k = 5;
  double q = 0.05;
  std::string learner = "linear";
  std::string map = "identity";
  std::string convention = "eq3";
  std::string split = "halves";
  std::string out;
  unsigned threads = 1;
  std::string on_missing = "error";
  bool allow_hidden_parents = false;
  bool no_timing = false;

  // simulate
  int m = 10, n = 1000, replicates = 5, count = 100;
  double p_c = 0.3, p_h = 0.0;
  std::string mixture = "f1", noise = "normal";

  // select
  std::string input, outcome = "Y", truth, scm;
  bool no_header = false;
};

nlohmann::json load_config(const std::string& path) {
  return path.empty() ? nlohmann::json::object() : drcfs::io::read_json_file(path);
}

bool given(CLI::App* app, const std::string& name) { return app->count(name) > 0; }

// Flags win over the config file; only flags actually passed override it.
void apply_drcfs_flags(CLI::App* app, const Flags& f, drcfs::DrcfsConfig& c) {
  if (given(app, "--seed")) c.seed = f.seed;
  if (given(app, "--k")) c.k = f.k;
  if (given(app, "--q")) c.q = f.q;
  if (given(app, "--learner")) c.learner.kind = drcfs::parse_learner(f.learner);
  if (given(app, "--map")) c.learner.map = drcfs::FeatureMap::parse(f.map);
  if (given(app, "--convention")) c.convention = drcfs::parse_convention(f.convention);
  if (given(app, "--split")) c.learner.split = drcfs::parse_split(f.split);
  if (given(app, "--threads")) c.threads = f.threads;
  if (c.k < 2) throw drcfs::ConfigError("--k must be >= 2");
  if (!(c.q > 0.0 && c.q <= 1.0)) throw drcfs::ConfigError("--q must lie in (0,1]");
}

void add_drcfs_flags(CLI::App* app, Flags& f) {
  app->add_option("--seed", f.seed, "Random seed");
  app->add_option("--k", f.k, "Cross-fitting folds (default 5)");
  app->add_option("--q", f.q, "FDR level for Benjamini-Yekutieli (default 0.05)");
  app->add_option("--learner", f.learner, "Nuisance learner: linear | forest");
  app->add_option("--map", f.map, "Feature map: identity | poly:<d>");
  app->add_option("--convention", f.convention, "Score convention: eq3 | paper");
  app->add_option("--split", f.split, "Mean/Riesz decorrelation: halves | streams | shared");
  app->add_option("--threads", f.threads, "Worker threads (default DRCFS_THREADS or hardware)");
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    drcfs::io::write_text(path, text);
  }
}

void print_table(const drcfs::SelectionReport& r) {
  std::fprintf(stderr, "%-16s %12s %10s %12s %12s %s\n", "feature", "chi", "t", "p_raw", "p_adj", "selected");
  for (const auto& f : r.results) {
    std::fprintf(stderr, "%-16s %12.6g %10.4g %12.4g %12.4g %s\n", f.name.c_str(), f.chi, f.t, f.p_raw, f.p_adj,
                 f.selected ? "yes" : "no");
  }
  for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

int cmd_simulate(CLI::App* app, const Flags& f) {
  nlohmann::json j = load_config(f.config);
  if (j.contains("dgp")) j = j.at("dgp");
  if (given(app, "--m")) j["m"] = f.m;
  if (given(app, "--n")) j["n"] = f.n;
  if (given(app, "--p-c")) j["p_c"] = f.p_c;
  if (given(app, "--p-h")) j["p_h"] = f.p_h;
  if (given(app, "--mixture")) j["mixture"] = f.mixture;
  if (given(app, "--noise")) j["noise"] = f.noise;
  if (given(app, "--seed")) j["seed"] = f.seed;
  if (given(app, "--allow-hidden-parents")) j["allow_hidden_parents"] = true;
  const drcfs::DgpConfig cfg = drcfs::dgp_from_json(j);
  const auto ds = drcfs::simulate_dataset(cfg);
  const std::string prefix = f.out.empty() ? "simulated" : f.out;
  std::ostringstream csv;
  drcfs::io::write_csv(csv, ds.features, ds.outcome, ds.column_names);
  drcfs::io::write_text(prefix + ".csv", csv.str());
  nlohmann::json truth = drcfs::ground_truth_json(ds, cfg);
  truth["version"] = drcfs::kVersion;
  drcfs::io::write_text(prefix + ".truth.json", truth.dump(2) + "\n");
  std::fprintf(stderr, "wrote %s.csv (%td rows, %td features) and %s.truth.json\n", prefix.c_str(),
               ds.features.rows(), ds.features.cols(), prefix.c_str());
  return kOk;
}

int cmd_select(CLI::App* app, const Flags& f) {
  const nlohmann::json j = load_config(f.config);
  drcfs::DrcfsConfig cfg;
  cfg.threads = drcfs::default_threads();
  drcfs::apply_drcfs_json(cfg, j);
  apply_drcfs_flags(app, f, cfg);

  drcfs::io::IngestOptions opt;
  std::string input = j.value("input", std::string{});
  opt.outcome = j.value("outcome", std::string("Y"));
  opt.header = !j.value("no_header", false);
  opt.on_missing = drcfs::io::parse_on_missing(j.value("on_missing", std::string("error")));
  std::string truth_path = j.value("truth", std::string{});
  if (given(app, "--input")) input = f.input;
  if (given(app, "--outcome")) opt.outcome = f.outcome;
  if (given(app, "--no-header")) opt.header = false;
  if (given(app, "--on-missing")) opt.on_missing = drcfs::io::parse_on_missing(f.on_missing);
  if (given(app, "--truth")) truth_path = f.truth;
  if (input.empty()) throw drcfs::ConfigError("select: --input is required");

  const auto ing = drcfs::io::ingest_csv(input, opt);
  for (const auto& w : ing.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

  auto report = drcfs::run_drcfs(ing.data, cfg);
  report.warnings.insert(report.warnings.begin(), ing.warnings.begin(), ing.warnings.end());
  if (!truth_path.empty()) {
    const auto tj = drcfs::io::read_json_file(truth_path);
    std::vector<std::string> parents;
    try {
      parents = tj.at("parents").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw drcfs::ConfigError("truth file: " + std::string(e.what()));
    }
    std::vector<bool> truth;
    for (const auto& name : ing.data.names)
      truth.push_back(std::find(parents.begin(), parents.end(), name) != parents.end());
    report.metrics = drcfs::score_selection(report.selected_mask(), truth);
  }
  print_table(report);
  nlohmann::json out = drcfs::report_json(report, !f.no_timing);
  out["input"] = {{"path", input}, {"outcome", opt.outcome}, {"rows", ing.data.rows()},
                  {"dropped_rows", ing.dropped_rows}};
  write_or_print(f.out, out.dump(2) + "\n");
  return kOk;
}

int cmd_benchmark(CLI::App* app, const Flags& f) {
  const nlohmann::json j = load_config(f.config);
  drcfs::BenchmarkConfig b = drcfs::benchmark_from_json(j);
  if (!j.contains("threads")) b.threads = drcfs::default_threads();
  apply_drcfs_flags(app, f, b.drcfs);
  if (given(app, "--seed")) b.seed = f.seed;
  if (given(app, "--threads")) b.threads = f.threads;
  if (given(app, "--replicates")) b.replicates = f.replicates;
  if (given(app, "--allow-hidden-parents")) b.allow_hidden_parents = true;
  if (b.replicates < 1) throw drcfs::ConfigError("--replicates must be >= 1");
  b.include_timing = !f.no_timing;

  const auto res = drcfs::run_benchmark(b);
  const std::filesystem::path dir = f.out.empty() ? "benchmark" : f.out;
  std::filesystem::create_directories(dir);
  drcfs::io::write_text((dir / "metrics.csv").string(), drcfs::metrics_csv(res, b));
  drcfs::io::write_text((dir / "selection_freq.csv").string(), drcfs::selection_freq_csv(res, b));
  drcfs::io::write_text((dir / "summary.json").string(), drcfs::summary_json(res, b).dump(2) + "\n");
  for (std::size_t c = 0; c < res.cells.size(); ++c) {
    const auto& s = res.summaries[c];
    std::fprintf(stderr, "cell %s: %zu/%d ok, acc %.3f f1 %.3f csi %.3f\n", res.cells[c].hash.c_str(), s.ok,
                 b.replicates, s.acc, s.f1, s.csi);
  }
  if (res.any_cell_wholly_failed()) {
    std::fprintf(stderr, "error: at least one grid cell failed in every replicate\n");
    return kBenchmark;
  }
  return kOk;
}

// Checks the exact identities on random discrete SCMs, or reports exact chi
// for a user-supplied SCM.
int cmd_oracle_check(CLI::App* app, const Flags& f) {
  using namespace drcfs::oracle;
  nlohmann::json out;
  if (given(app, "--scm")) {
    const auto s = scm_from_json(drcfs::io::read_json_file(f.scm));
    const auto mom = chi_from_moments(s);
    nlohmann::json feats = nlohmann::json::array();
    const auto obs = s.observed();
    bool ok = true;
    for (std::size_t c = 0; c < obs.size(); ++c) {
      const double chi = exact_chi(s, obs[c]);
      ok = ok && std::abs(chi - mom[c]) <= 1e-12;
      feats.push_back({{"name", s.nodes[obs[c]].name}, {"chi", chi}, {"chi_from_moments", mom[c]}});
    }
    out = {{"features", feats}, {"identities_hold", ok}};
    write_or_print(f.out, out.dump(2) + "\n");
    return ok ? kOk : kEstimation;
  }
  int failures = 0;
  double worst_acde = 0.0, worst_chi = 0.0;
  for (int i = 0; i < f.count; ++i) {
    const std::size_t feats = 1 + static_cast<std::size_t>(i % 4);
    const auto s = random_binary_scm(feats, drcfs::derive_seed(f.seed, static_cast<std::uint64_t>(i)));
    const auto obs = s.observed();
    const auto mom = chi_from_moments(s);
    for (std::size_t c = 0; c < obs.size(); ++c) {
      const double chi = exact_chi(s, obs[c]);
      worst_chi = std::max(worst_chi, std::abs(chi - mom[c]));
      const bool parent = std::find(s.outcome.parents.begin(), s.outcome.parents.end(), obs[c]) !=
                          s.outcome.parents.end();
      if ((chi > 1e-12) != parent) ++failures;
      std::vector<std::size_t> ctx(obs.size(), 0);
      for (std::size_t cfg = 0; cfg < (std::size_t{1} << obs.size()); ++cfg) {
        for (std::size_t r = 0; r < obs.size(); ++r) ctx[r] = (cfg >> r) & 1U;
        const auto a = exact_acde(s, obs[c], 1, 0, ctx);
        worst_acde = std::max(worst_acde, std::abs(a.interventional - a.observational));
      }
    }
  }
  const bool ok = failures == 0 && worst_acde <= 1e-12 && worst_chi <= 1e-12;
  out = {{"scms", f.count},
         {"seed", f.seed},
         {"max_acde_gap", worst_acde},
         {"max_chi_gap", worst_chi},
         {"parent_mismatches", failures},
         {"identities_hold", ok}};
  write_or_print(f.out, out.dump(2) + "\n");
  return ok ? kOk : kEstimation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Doubly robust causal feature selection"};
  app.set_version_flag("--version", std::string(drcfs::kVersion));
  app.require_subcommand(1);
  Flags f;

  auto* sim = app.add_subcommand("simulate", "Simulate a dataset from a random causal graph");
  sim->add_option("--config", f.config, "JSON config (flags override it)");
  sim->add_option("--seed", f.seed, "Random seed");
  sim->add_option("--m", f.m, "Number of features");
  sim->add_option("--n", f.n, "Number of observations");
  sim->add_option("--p-c", f.p_c, "Edge probability");
  sim->add_option("--p-h", f.p_h, "Hiding probability");
  sim->add_option("--mixture", f.mixture, "Transform family, e.g. f1 or f6");
  sim->add_option("--noise", f.noise, "normal | beta(a,b)");
  sim->add_flag("--allow-hidden-parents", f.allow_hidden_parents, "Allow hiding parents of the outcome");
  sim->add_option("--out", f.out, "Output prefix (writes <prefix>.csv and <prefix>.truth.json)");

  auto* sel = app.add_subcommand("select", "Run feature selection on a CSV file");
  sel->add_option("--config", f.config, "JSON config (flags override it)");
  sel->add_option("--input", f.input, "Input CSV");
  sel->add_option("--outcome", f.outcome, "Outcome column name or 0-based index (default Y)");
  sel->add_flag("--no-header", f.no_header, "Input has no header row");
  sel->add_option("--on-missing", f.on_missing, "error | drop");
  sel->add_option("--truth", f.truth, "Ground-truth JSON with a \"parents\" list; adds metrics");
  sel->add_option("--out", f.out, "Report JSON path (default stdout)");
  sel->add_flag("--no-timing", f.no_timing, "Write wall time as 0 for byte-identical reports");
  add_drcfs_flags(sel, f);

  auto* bench = app.add_subcommand("benchmark", "Replicate sweep over a DGP grid");
  bench->add_option("--config", f.config, "JSON grid config (flags override it)");
  bench->add_option("--out", f.out, "Output directory (default ./benchmark)");
  bench->add_option("--replicates", f.replicates, "Replicates per grid cell");
  bench->add_flag("--allow-hidden-parents", f.allow_hidden_parents, "Allow hiding parents of the outcome");
  bench->add_flag("--no-timing", f.no_timing, "Write wall_ms as 0 for byte-identical output");
  add_drcfs_flags(bench, f);

  auto* orc = app.add_subcommand("oracle-check", "Exact identities on random discrete SCMs");
  orc->add_option("--seed", f.seed, "Random seed");
  orc->add_option("--count", f.count, "Number of random SCMs (default 100)");
  orc->add_option("--scm", f.scm, "Evaluate a discrete SCM given as JSON instead");
  orc->add_option("--out", f.out, "Output JSON path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*sim) return cmd_simulate(sim, f);
    if (*sel) return cmd_select(sel, f);
    if (*bench) return cmd_benchmark(bench, f);
    return cmd_oracle_check(orc, f);
  } catch (const drcfs::IngestError& e) {
    std::fprintf(stderr, "ingest error: %s\n", e.what());
    return kIngest;
  } catch (const drcfs::EstimationError& e) {
    std::fprintf(stderr, "estimation error: %s\n", e.what());
    return kEstimation;
  } catch (const drcfs::Error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfig;
  }
}
