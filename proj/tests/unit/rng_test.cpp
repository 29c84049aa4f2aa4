#include <gtest/gtest.h>

#include <cstdlib>
#include <stdexcept>

#include "hqdm/parallel.hpp"
#include "hqdm/rng.hpp"

namespace hqdm {
namespace {

TEST(DeriveSeed, StreamsDiffer) {
  EXPECT_NE(derive_seed(1, "teacher"), derive_seed(1, "data"));
  EXPECT_NE(derive_seed(1, "teacher"), derive_seed(2, "teacher"));
  EXPECT_EQ(derive_seed(7, "sample"), derive_seed(7, "sample"));
}

TEST(Rng, StateRestoresSubsequentDraws) {
  Rng a(42);
  for (int i = 0; i < 5; ++i) a.normal();
  const std::string s = a.state();
  std::vector<double> first;
  for (int i = 0; i < 10; ++i) first.push_back(a.normal());
  Rng b;
  b.set_state(s);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(b.normal(), first[i]);
}

TEST(Rng, NormalMoments) {
  Rng r(5);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(Rng, IndexInRange) {
  Rng r(9);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(r.index(7), 7u);
}

TEST(Parallel, EveryIndexVisitedOnce) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(Parallel, ExceptionPropagates) {
  EXPECT_THROW(parallel_for(10, [](std::size_t i) {
                 if (i == 3) throw std::runtime_error("boom");
               }),
               std::runtime_error);
}

TEST(Parallel, ThreadCapFromEnvironment) {
  setenv("HQDM_THREADS", "3", 1);
  EXPECT_EQ(worker_count(), 3u);
  unsetenv("HQDM_THREADS");
  EXPECT_GE(worker_count(), 1u);
}

}  // namespace
}  // namespace hqdm
