#include "drcfs/benchmark.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace drcfs;

namespace {

BenchmarkConfig small_config() {
  BenchmarkConfig b;
  b.m = {4};
  b.n = {300};
  b.replicates = 5;
  b.seed = 42;
  b.include_timing = false;
  return b;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Benchmark, OneRowPerReplicatePlusSummary) {
  auto b = small_config();
  auto res = run_benchmark(b);
  auto csv = lines(metrics_csv(res, b));
  ASSERT_EQ(csv.size(), 1u + 5u + 1u);
  EXPECT_EQ(csv[0], "config_hash,seed,m,n,p_c,p_h,learner,acc,f1,csi,wall_ms,status");
  EXPECT_NE(csv[6].find(",summary,"), std::string::npos);
  EXPECT_NE(csv[6].find("ok 5/5"), std::string::npos);
  for (int r = 0; r < 5; ++r) EXPECT_EQ(res.rows[static_cast<std::size_t>(r)].seed, 42u ^ static_cast<unsigned>(r));
}

TEST(Benchmark, GridCellsEachGetASummary) {
  auto b = small_config();
  b.p_c = {0.2, 0.6};
  b.replicates = 2;
  auto res = run_benchmark(b);
  ASSERT_EQ(res.cells.size(), 2u);
  EXPECT_NE(res.cells[0].hash, res.cells[1].hash);
  int summaries = 0;
  for (const auto& l : lines(metrics_csv(res, b))) summaries += l.find(",summary,") != std::string::npos;
  EXPECT_EQ(summaries, 2);
  auto j = summary_json(res, b);
  EXPECT_EQ(j["cells"].size(), 2u);
}

TEST(Benchmark, ReplayIsByteIdentical) {
  auto b = small_config();
  b.replicates = 3;
  auto a = run_benchmark(b);
  b.threads = 3;
  auto c = run_benchmark(b);
  EXPECT_EQ(metrics_csv(a, b), metrics_csv(c, b));
  EXPECT_EQ(selection_freq_csv(a, b), selection_freq_csv(c, b));
  EXPECT_EQ(summary_json(a, b).dump(), summary_json(c, b).dump());
}

TEST(Benchmark, FailingCellDoesNotAbortSiblings) {
  auto b = small_config();
  b.m = {1, 4};  // one feature cannot be tested against a drop-one set
  b.replicates = 2;
  auto res = run_benchmark(b);
  ASSERT_EQ(res.summaries.size(), 2u);
  EXPECT_EQ(res.summaries[0].ok, 0u);
  EXPECT_EQ(res.summaries[1].ok, 2u);
  EXPECT_TRUE(res.any_cell_wholly_failed());
  const auto csv = metrics_csv(res, b);
  EXPECT_NE(csv.find("error: "), std::string::npos);
  EXPECT_NE(csv.find("ok 0/2"), std::string::npos);
  EXPECT_EQ(summary_json(res, b)["cells"][0]["failures"].size(), 2u);
}

TEST(Benchmark, SelectionFrequencies) {
  auto b = small_config();
  auto res = run_benchmark(b);
  auto csv = lines(selection_freq_csv(res, b));
  ASSERT_EQ(csv.size(), 1u + 4u);
  for (std::size_t i = 1; i < csv.size(); ++i) {
    std::istringstream row(csv[i]);
    std::vector<std::string> f;
    for (std::string x; std::getline(row, x, ',');) f.push_back(x);
    ASSERT_EQ(f.size(), 7u);
    const int selected = std::stoi(f[4]), reps = std::stoi(f[5]);
    EXPECT_LE(selected, std::stoi(f[2]));
    EXPECT_DOUBLE_EQ(std::stod(f[6]), static_cast<double>(selected) / reps);
  }
}

TEST(Benchmark, ConfigParsing) {
  auto j = nlohmann::json::parse(R"({"grid": {"m": [5, 6], "n": 500, "p_c": 0.1, "mixture": "f2"},
                                     "replicates": 3, "seed": 9, "drcfs": {"k": 4, "q": 0.1}})");
  auto b = benchmark_from_json(j);
  EXPECT_EQ(b.m, (std::vector<int>{5, 6}));
  EXPECT_EQ(b.n, (std::vector<int>{500}));
  EXPECT_EQ(b.replicates, 3);
  EXPECT_EQ(b.drcfs.k, 4);
  EXPECT_EQ(b.drcfs.q, 0.1);
  EXPECT_EQ(expand_grid(b).size(), 2u);
  EXPECT_THROW(benchmark_from_json(nlohmann::json::parse(R"({"replicates": 0})")), ConfigError);
  EXPECT_THROW(benchmark_from_json(nlohmann::json::parse(R"({"drcfs": {"k": 1}})")), ConfigError);
  EXPECT_THROW(benchmark_from_json(nlohmann::json::parse(R"({"m": "ten"})")), ConfigError);
}

TEST(Benchmark, CellHashIgnoresSeeds) {
  auto b = small_config();
  auto h1 = expand_grid(b)[0].hash;
  b.seed = 1234;
  b.drcfs.seed = 99;
  EXPECT_EQ(expand_grid(b)[0].hash, h1);
  b.drcfs.q = 0.1;
  EXPECT_NE(expand_grid(b)[0].hash, h1);
}
