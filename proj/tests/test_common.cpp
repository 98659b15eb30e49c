#include "drcfs/common.hpp"

#include <gtest/gtest.h>

#include <set>
#include <stdexcept>

using namespace drcfs;

TEST(Seeds, DerivedSeedsAreDeterministicAndDistinct) {
  EXPECT_EQ(derive_seed(42, 7), derive_seed(42, 7));
  std::set<std::uint64_t> seen;
  for (std::uint64_t tag = 0; tag < 1000; ++tag) seen.insert(derive_seed(42, tag));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  for (unsigned threads : {1u, 3u, 8u}) {
    std::vector<int> hits(100, 0);
    parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) EXPECT_EQ(h, 1);
  }
}

TEST(ParallelFor, RethrowsLowestFailingIndex) {
  for (unsigned threads : {1u, 4u}) {
    try {
      parallel_for(50, threads, [](std::size_t i) {
        if (i == 17 || i == 33) throw std::runtime_error("fail " + std::to_string(i));
      });
      FAIL() << "expected an exception";
    } catch (const std::runtime_error& e) {
      EXPECT_STREQ(e.what(), "fail 17");
    }
  }
}

TEST(Select, RowsAndColumns) {
  Matrix x(3, 3);
  x << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  Matrix c = select_columns(x, {2, 0});
  EXPECT_EQ(c(1, 0), 6);
  EXPECT_EQ(c(1, 1), 4);
  Matrix r = select_rows(x, {2});
  EXPECT_EQ(r.rows(), 1);
  EXPECT_EQ(r(0, 1), 8);
  Vector v(3);
  v << 10, 20, 30;
  EXPECT_EQ(select_rows(v, {1, 1})(1), 20);
}
