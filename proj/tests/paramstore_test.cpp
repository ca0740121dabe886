#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <set>
#include <thread>
#include <vector>

#include "lppsgd/paramstore.hpp"
#include "support/stress.hpp"

using namespace lppsgd;

TEST(ParamStore, FreshCounterStartsAtZero) {
  std::vector<double> x{1.0};
  ParamStore s(x);
  EXPECT_EQ(s.read(), 0u);
  EXPECT_EQ(s.readAndInc(), 0u);
  EXPECT_EQ(s.readAndInc(), 1u);
  EXPECT_EQ(s.read(), 2u);
}

TEST(ParamStore, ConcurrentReadAndIncHandsOutEachValueOnce) {
  std::vector<double> x{0.0};
  ParamStore s(x);
  std::vector<std::uint64_t> got(64);
  stress::runThreads(64, [&](int t) { got[static_cast<std::size_t>(t)] = s.readAndInc(); });
  std::set<std::uint64_t> seen(got.begin(), got.end());
  std::set<std::uint64_t> expect;
  for (std::uint64_t i = 0; i < 64; ++i) expect.insert(i);
  EXPECT_EQ(seen, expect);
}

TEST(ParamStore, QuiescentSnapshotCopiesValues) {
  std::vector<double> x{1.0, 2.0, 3.0};
  ParamStore s(x);
  const auto snap = s.collectSnapshot(7);
  EXPECT_EQ(snap.values, x);
  EXPECT_EQ(snap.order, 7u);
}

TEST(ParamStore, EmptyStore) {
  std::vector<double> x;
  ParamStore s(x);
  EXPECT_EQ(s.size(), 0u);
  EXPECT_TRUE(s.collectSnapshot().values.empty());
  EXPECT_EQ(s.atomicSubAssign({0, 0}, {}), 1u);
}

TEST(ParamStore, BlockSubtractionExample) {
  // (1,2,3,4) minus (-10,-20) on the second and third entries
  std::vector<double> x{1, 2, 3, 4};
  ParamStore s(x);
  std::vector<double> delta{-10, -20};
  s.atomicSubAssign({1, 3}, delta);
  EXPECT_EQ(s.values(), (std::vector<double>{1, 12, 23, 4}));
}

TEST(ParamStore, ZeroDeltaIsIdentity) {
  std::vector<double> x{0.5, -1.25, 3.0};
  ParamStore s(x);
  std::vector<double> z(3, 0.0);
  s.atomicSubAssign({0, 3}, z);
  s.atomicAddAssign(z);
  EXPECT_EQ(s.values(), x);
}

TEST(ParamStore, FullVectorAdd) {
  std::vector<double> x{2, 4};
  ParamStore s(x);
  std::vector<double> delta{-1, 1};
  s.atomicAddAssign(delta);
  EXPECT_EQ(s.values(), (std::vector<double>{1, 5}));
}

TEST(ParamStore, Errors) {
  std::vector<double> x{1, 2, 3};
  ParamStore s(x);
  std::vector<double> two{1, 1};
  EXPECT_THROW(s.atomicSubAssign({2, 4}, two), BoundsError);
  EXPECT_THROW(s.atomicSubAssign({0, 3}, two), ShapeError);
  EXPECT_THROW(s.atomicAddAssign(two), ShapeError);
  EXPECT_THROW(s.load(3), BoundsError);
  EXPECT_THROW(ParamStore(x, {0, 5}), BoundsError);
  EXPECT_THROW(ParamStore(x, {1, 0}), ValidationError);
}

TEST(ParamStore, UpdateOrdersAreOneBasedAndTagged) {
  std::vector<double> x(4, 0.0);
  ParamStore s(x, {0, 1, 2, 3});
  std::vector<double> one{1.0};
  EXPECT_EQ(s.nextUpdateOrder(), 1u);
  EXPECT_EQ(s.atomicSubAssign({2, 3}, one), 1u);
  EXPECT_EQ(s.atomicSubAssign({0, 1}, one), 2u);
  const auto snap = s.collectSnapshot();
  EXPECT_EQ(snap.provenance, (std::vector<std::uint64_t>{2, 0, 1, 0}));
  // the averager's add carries its stamp but does not consume an order
  std::vector<double> z(4, 0.0);
  EXPECT_EQ(s.atomicAddAssign(z), 3u);
  EXPECT_EQ(s.updatesIssued(), 2u);
  EXPECT_EQ(s.collectSnapshot().provenance, (std::vector<std::uint64_t>{3, 3, 3, 3}));
}

TEST(ParamStore, TrackedSampleIsFullForSmallVectors) {
  EXPECT_EQ(chooseTrackedIndices(5, 2, 1).size(), 5u);
  const auto t = chooseTrackedIndices(1000, 32, 1);
  EXPECT_EQ(t.size(), 32u);
  EXPECT_TRUE(std::is_sorted(t.begin(), t.end()));
  EXPECT_EQ(t, chooseTrackedIndices(1000, 32, 1));
}

TEST(ParamStore, TwoThreadsTenThousandIncrementsLoseNothing) {
  std::vector<double> x{0.0, 0.0};
  ParamStore s(x);
  stress::runThreads(2, [&](int) {
    std::vector<double> minus{-1.0};
    for (int i = 0; i < 10000; ++i) s.atomicSubAssign({1, 2}, minus);
  });
  EXPECT_EQ(s.load(1), 20000.0);
  EXPECT_EQ(s.load(0), 0.0);
}

TEST(ParamStore, ConcurrentAddAndSubtractAtDisjointIndices) {
  // the averager adds on the full vector while updaters subtract on blocks;
  // the per-index ledger of effects must be applied exactly once
  const std::size_t d = 8;
  std::vector<double> x(d, 0.0);
  ParamStore s(x);
  stress::runThreads(5, [&](int t) {
    if (t == 0) {
      std::vector<double> add(d);
      for (std::size_t e = 0; e < d; ++e) add[e] = static_cast<double>(e + 1);
      for (int i = 0; i < 2000; ++i) s.atomicAddAssign(add, 0);
    } else {
      const std::size_t begin = static_cast<std::size_t>(t - 1) * 2;
      std::vector<double> sub{-100.0, -1000.0};
      for (int i = 0; i < 2000; ++i) s.atomicSubAssign({begin, begin + 2}, sub);
    }
  });
  for (std::size_t e = 0; e < d; ++e) {
    const double expect = 2000.0 * static_cast<double>(e + 1) + 2000.0 * (e % 2 == 0 ? 100.0 : 1000.0);
    EXPECT_EQ(s.load(e), expect) << "index " << e;
  }
}

TEST(ParamStoreStress, CounterUniqueness) { EXPECT_EQ(stress::counterUniqueness(64, 500), ""); }
TEST(ParamStoreStress, LostUpdate) { EXPECT_EQ(stress::lostUpdate(64, 300), ""); }
TEST(ParamStoreStress, TornRead) { EXPECT_EQ(stress::tornRead(64, 300), ""); }
TEST(ParamStoreStress, SnapshotMembership) { EXPECT_EQ(stress::snapshotMembership(8, 2000), ""); }
