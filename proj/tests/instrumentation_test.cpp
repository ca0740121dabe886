#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <memory>
#include <vector>

#include "lppsgd/engine.hpp"
#include "lppsgd/instrumentation.hpp"

using namespace lppsgd;

namespace {

UpdateRecord rec(std::uint32_t worker, std::uint64_t u, std::vector<std::uint64_t> prov) {
  UpdateRecord r;
  r.worker = worker;
  r.update_order = u;
  r.provenance = std::move(prov);
  return r;
}

AveragingRound round(std::uint64_t j, std::vector<std::uint64_t> stamps) {
  AveragingRound r;
  r.j = j;
  for (auto s : stamps) {
    RoundParticipant p;
    p.stamp = s;
    r.workers.push_back(p);
  }
  return r;
}

ConsistencyStats cs(double alpha, double dist, std::size_t good, double M = 1.0) {
  ConsistencyStats s;
  s.alpha = alpha;
  s.mean_distance = dist;
  s.mean_distance_sq = dist * dist;
  s.good_events = good;
  s.d = 4;
  s.k_bar = 8;
  s.M = M;
  return s;
}

}  // namespace

TEST(Delay, ClassifyExamples) {
  EXPECT_EQ(classifyDelayEvent(rec(0, 10, {5, 7, 9}), 5), DelayClass::good);
  EXPECT_EQ(classifyDelayEvent(rec(0, 10, {5, 7, 9}), 6), DelayClass::bad);
  EXPECT_EQ(classifyDelayEvent(rec(0, 10, {0, 0}), 0), DelayClass::good);
  EXPECT_EQ(classifyDelayEvent(rec(0, 10, {}), 0), DelayClass::unclassified);
}

TEST(Delay, IterationOrdersFollowStamps) {
  // worker 0 averages before its 3rd and 6th write
  std::vector<UpdateRecord> rs;
  for (std::uint64_t u = 1; u <= 7; ++u) {
    if (u == 3 || u == 6) continue;  // those orders went to the averager
    rs.push_back(rec(0, u, {u - 1}));
  }
  const std::vector<AveragingRound> rounds{round(1, {3}), round(2, {6})};
  assignIterationOrders(rs, rounds);
  std::vector<std::pair<std::int64_t, std::int64_t>> jt;
  for (const auto& r : rs) jt.emplace_back(r.round, r.t);
  EXPECT_EQ(jt, (std::vector<std::pair<std::int64_t, std::int64_t>>{{0, 0}, {0, 1}, {1, 0}, {1, 1}, {2, 0}}));
  EXPECT_EQ(roundStartFor(rs[2], rounds), 3u);
  EXPECT_EQ(roundStartFor(rs[4], rounds), 6u);
  EXPECT_EQ(roundStartFor(rs[0], rounds), 0u);

  const auto st = buildDelayStats(rs, rounds, 4, 1);
  // u=4 saw tag 3 (>= 3): good; u=5 saw tag 4: good; u=7 saw tag 6: good;
  // u=1,2 predate any round: good
  EXPECT_EQ(st.good, 5u);
  EXPECT_DOUBLE_EQ(st.p_hat, 1.0);
  rs[3].provenance = {2};  // u=5 read a pre-round value
  const auto st2 = buildDelayStats(rs, rounds, 4, 1);
  EXPECT_EQ(st2.bad, 1u);
  EXPECT_DOUBLE_EQ(st2.p_hat_by_t[1], 0.5);
}

TEST(Replay, SingleWorkerIsPlainSequentialSgd) {
  // one worker: averaging is the identity, so the views are x0 minus the steps so far
  const std::vector<double> x0{1.0, 2.0, 3.0};
  std::vector<UpdateRecord> rs;
  std::vector<double> x = x0;
  for (std::uint64_t u = 1; u <= 6; ++u) {
    UpdateRecord r = rec(0, u, {});
    r.block_begin = u % 3;
    r.snapshot = x;
    r.delta = {0.1 * static_cast<double>(u)};
    x[r.block_begin] -= r.delta[0];
    rs.push_back(r);
  }
  // the averaging happened between the 3rd and 4th write
  std::vector<AveragingRound> rounds{round(1, {4})};
  rounds[0].workers[0].snapshot_order = 3;
  const auto replay = reconstructMinorViews(rs, rounds, x0, 1);
  ASSERT_EQ(replay.xbar.size(), 2u);
  std::vector<double> after3 = x0;
  for (std::size_t k = 0; k < 3; ++k) after3[rs[k].block_begin] -= rs[k].delta[0];
  EXPECT_EQ(replay.xbar[1], after3);
  EXPECT_EQ(replay.final_views[0], x);
  for (double dist : replay.distances) EXPECT_EQ(dist, 0.0);
}

TEST(Replay, Errors) {
  const std::vector<double> x0{0.0, 0.0};
  std::vector<UpdateRecord> rs{rec(0, 1, {})};
  EXPECT_THROW(reconstructMinorViews(rs, {}, x0, 1), ReconstructionError);  // no delta
  rs[0].delta = {1.0};
  rs[0].update_order = 2;
  EXPECT_THROW(reconstructMinorViews(rs, {}, x0, 1), ReconstructionError);  // gap
  rs[0].update_order = 1;
  rs[0].block_begin = 2;
  EXPECT_THROW(reconstructMinorViews(rs, {}, x0, 1), ReconstructionError);
  rs[0].block_begin = 0;
  rs[0].worker = 3;
  EXPECT_THROW(reconstructMinorViews(rs, {}, x0, 1), ReconstructionError);
}

TEST(Summability, AllGoodGrowsLinearly) {
  DelayStats st;
  for (std::uint64_t u = 1; u <= 100; ++u) st.events.push_back({0, 0, 0, u, DelayClass::good});
  const auto rep = summabilityReport(st);
  EXPECT_DOUBLE_EQ(rep.sum_p_hat, 100.0);
  EXPECT_TRUE(rep.linear_growth);
}

TEST(Summability, GoodMassThatStopsIsFlagged) {
  DelayStats st;
  for (std::uint64_t u = 1; u <= 100; ++u) {
    st.events.push_back({0, 0, 0, u, u <= 50 ? DelayClass::good : DelayClass::bad});
  }
  const auto rep = summabilityReport(st);
  EXPECT_DOUBLE_EQ(rep.second_half_rate, 0.0);
  EXPECT_FALSE(rep.linear_growth);
  EXPECT_FALSE(summabilityReport(DelayStats{}).linear_growth);
}

TEST(Rate, InverseSqrtPasses) {
  std::map<std::uint64_t, std::vector<double>> series;
  for (std::uint64_t J : {100u, 200u, 400u, 800u}) {
    series[J] = std::vector<double>(5, 3.0 / std::sqrt(static_cast<double>(J)));
  }
  const auto rep = ergodicRateCheck(series);
  EXPECT_NEAR(rep.slope, -0.5, 1e-12);
  EXPECT_TRUE(rep.pass);
}

TEST(Rate, FlatOrTooFewFails) {
  std::map<std::uint64_t, std::vector<double>> series;
  for (std::uint64_t J : {100u, 200u, 400u, 800u}) series[J] = std::vector<double>(5, 1.0);
  EXPECT_FALSE(ergodicRateCheck(series).pass);
  series[100] = std::vector<double>(5, 1.1);  // decreases once, slope about -0.04
  EXPECT_FALSE(ergodicRateCheck(series).pass);
  series.erase(800);
  EXPECT_THROW(ergodicRateCheck(series), ValidationError);
  series[800] = std::vector<double>(4, 1.0);
  EXPECT_THROW(ergodicRateCheck(series), ValidationError);
}

TEST(Rate, ErgodicStatisticSkipsStartingPoint) {
  Quadratic q(std::make_shared<const Dataset>(quadraticCenters(1, std::vector<double>{1.0, 1.0}, 0.0, 1)));
  const std::vector<std::vector<double>> xbar{{1.0, 1.0}, {0.0, 1.0}, {0.5, 1.0}};
  EXPECT_DOUBLE_EQ(ergodicStatistic(q, xbar), 0.25);
  EXPECT_THROW(ergodicStatistic(q, {}), ValidationError);
}

TEST(Consistency, ReportCases) {
  // B = sqrt(4) * 8 * 1 = 16; bound = alpha^2 * 256
  EXPECT_DOUBLE_EQ(cs(0.1, 0, 0).bound(), 0.01 * 256);
  auto ok = elasticConsistencyCheck({cs(0.04, 0.4, 200, 10), cs(0.01, 0.1, 200, 10), cs(0.02, 0.2, 200, 10)});
  EXPECT_TRUE(ok.sufficient);
  EXPECT_TRUE(ok.monotone);
  EXPECT_TRUE(ok.under_bound);
  EXPECT_NEAR(ok.slope, 1.0, 1e-12);
  EXPECT_EQ(ok.per_alpha.front().alpha, 0.01);

  auto flat = elasticConsistencyCheck({cs(0.01, 0.2, 200), cs(0.02, 0.2, 200), cs(0.04, 0.3, 200)});
  EXPECT_FALSE(flat.monotone);
  auto over = elasticConsistencyCheck({cs(0.01, 0.1, 200), cs(0.02, 0.2, 200), cs(0.04, 0.5, 200)});
  EXPECT_FALSE(over.under_bound);  // 0.5 > 0.0016 * 256
  auto thin = elasticConsistencyCheck({cs(0.01, 0.1, 200), cs(0.02, 0.2, 99), cs(0.04, 0.4, 200)});
  EXPECT_FALSE(thin.sufficient);
  EXPECT_FALSE(elasticConsistencyCheck({cs(0.01, 0.1, 200), cs(0.02, 0.2, 200)}).sufficient);
}

TEST(Consistency, StatsPoolOnlyGoodEvents) {
  std::vector<UpdateRecord> rs{rec(0, 1, {0}), rec(0, 2, {0}), rec(0, 3, {0})};
  DelayStats st;
  st.events = {{0, 0, 0, 1, DelayClass::good}, {0, 0, 1, 2, DelayClass::bad}, {0, 0, 2, 3, DelayClass::good}};
  st.k_bar = 3;
  MinorViewReplay replay;
  replay.distances = {1.0, 100.0, 3.0};
  const auto s = consistencyStats(0.5, st, rs, replay, 9, 2.0);
  EXPECT_EQ(s.good_events, 2u);
  EXPECT_DOUBLE_EQ(s.mean_distance, 2.0);
  EXPECT_DOUBLE_EQ(s.mean_distance_sq, 5.0);
  EXPECT_DOUBLE_EQ(s.B(), 3.0 * 3.0 * 2.0);
}

TEST(Delay, ContendedRunHasSomeGoodEvents) {
  // averaging after every step with eight unthrottled updaters: some snapshots
  // predate the latest averaging write, but good events keep occurring
  auto ds = std::make_shared<const Dataset>(gaussianBlobs(256, 16, 4, 3.0, 1.0, 1));
  auto obj = std::make_shared<Mlp>(ds, std::vector<std::size_t>{16, 64, 64, 4});
  RunConfig cfg;
  cfg.algo = Algorithm::lap_sgd;
  cfg.workers = 2;
  cfg.updaters = 8;
  cfg.batch = 8;
  cfg.budget = 2000;
  cfg.lr = LrSchedule::constant(0.01, cfg.budget);
  cfg.sync = SyncScheme::postLocal(cfg.budget, 1);
  cfg.cooperative_yield = false;
  const auto r = runExperiment(cfg, obj, obj->initialParams(1));
  const auto st = buildDelayStats(r.records, r.rounds);
  EXPECT_EQ(st.good + st.bad, 2 * cfg.budget);
  EXPECT_GT(st.p_hat, 0.0);
  EXPECT_LT(st.p_hat, 1.0);
  const auto sum = summabilityReport(st);
  EXPECT_TRUE(sum.linear_growth);
}
