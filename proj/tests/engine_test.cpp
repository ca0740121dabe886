#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <memory>
#include <thread>
#include <vector>

#include "lppsgd/engine.hpp"
#include "lppsgd/instrumentation.hpp"
#include "lppsgd/rendezvous.hpp"

using namespace lppsgd;

namespace {

std::shared_ptr<const Objective> quadratic(std::size_t d = 8, std::uint64_t seed = 1) {
  std::vector<double> c(d);
  for (std::size_t e = 0; e < d; ++e) c[e] = std::sin(static_cast<double>(e) + 1.0);
  return std::make_shared<Quadratic>(std::make_shared<const Dataset>(quadraticCenters(64, c, 0.5, seed)));
}

std::shared_ptr<const Objective> logistic() {
  return std::make_shared<LogisticRegression>(
      std::make_shared<const Dataset>(gaussianBlobs(80, 4, 2, 2.0, 1.0, 3)));
}

std::shared_ptr<const Mlp> mlp() {
  return std::make_shared<Mlp>(std::make_shared<const Dataset>(gaussianBlobs(60, 4, 3, 3.0, 1.0, 2)),
                               std::vector<std::size_t>{4, 6, 6, 3});
}

RunConfig baseConfig(Algorithm algo, std::uint64_t T) {
  RunConfig c;
  c.algo = algo;
  c.workers = 2;
  c.updaters = isAsync(algo) ? 3 : 1;
  c.batch = 4;
  c.budget = T;
  c.lr = LrSchedule::constant(0.05, T);
  c.sync = SyncScheme::postLocal(T, 4);
  c.warm_start = T / 10;
  c.seed = 9;
  return c;
}

double maxAbsDiff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Engine, PlWithSyncEveryStepMatchesMinibatch) {
  for (auto obj : {quadratic(), logistic()}) {
    const std::vector<double> x0(obj->dim(), 0.1);
    auto pl = baseConfig(Algorithm::pl_sgd, 300);
    pl.sync = SyncScheme::postLocal(300, 1);
    pl.workers = 3;
    auto mb = pl;
    mb.algo = Algorithm::mb_sgd;
    const auto a = runExperiment(pl, obj, x0);
    const auto b = runExperiment(mb, obj, x0);
    EXPECT_LE(maxAbsDiff(a.final_params[0], b.final_params[0]), 1e-12);
    EXPECT_LE(maxAbsDiff(a.final_params[2], b.final_params[0]), 1e-12);
  }
}

TEST(Engine, MinibatchOverWorkersMatchesSingleWorkerWithLargerBatch) {
  auto obj = logistic();
  const std::vector<double> x0(obj->dim(), 0.0);
  auto two = baseConfig(Algorithm::mb_sgd, 200);
  auto one = two;
  one.workers = 1;
  one.batch = 2 * two.batch;
  const auto a = runExperiment(two, obj, x0);
  const auto b = runExperiment(one, obj, x0);
  EXPECT_LE(maxAbsDiff(a.final_params[0], b.final_params[0]), 1e-12);
}

TEST(Engine, SynchronousRunsAreDeterministic) {
  auto obj = mlp();
  const auto x0 = obj->initialParams(1);
  for (auto algo : {Algorithm::mb_sgd, Algorithm::pl_sgd}) {
    auto cfg = baseConfig(algo, 150);
    const auto a = runExperiment(cfg, obj, x0);
    const auto b = runExperiment(cfg, obj, x0);
    EXPECT_EQ(a.final_params, b.final_params);
    cfg.seed = 10;
    EXPECT_NE(runExperiment(cfg, obj, x0).final_params, a.final_params);
  }
}

TEST(Engine, PlAveragesEveryKSteps) {
  auto obj = quadratic();
  const std::vector<double> x0(obj->dim(), 0.0);
  auto cfg = baseConfig(Algorithm::pl_sgd, 100);
  cfg.sync = SyncScheme{100, 8, 40};
  cfg.eval_interval = 0;
  const auto r = runExperiment(cfg, obj, x0);
  // s = 1..39 average every step, then s = 48, 56, ..., 96, then the final average at T
  EXPECT_EQ(r.evals.back().round, 39u + 7u + 1u);
  EXPECT_EQ(r.final_params[0], r.final_params[1]);
}

TEST(Engine, ZeroLearningRateLeavesModelUnchanged) {
  auto obj = mlp();
  const auto x0 = obj->initialParams(4);
  for (auto algo : {Algorithm::lap_sgd, Algorithm::lpp_sgd}) {
    auto cfg = baseConfig(algo, 200);
    cfg.updaters = 2;
    cfg.lr = LrSchedule::constant(0.0, 200);
    const auto r = runExperiment(cfg, obj, x0);
    for (const auto& x : r.final_params) EXPECT_EQ(x, x0);
  }
}

TEST(Engine, ForcedPartialMatchesIndependentBlockSgd) {
  // For the quadratic every block's gradient depends on that block only, so
  // with one worker each updater runs plain SGD on its own block.
  auto obj = quadratic(9);
  const std::vector<double> x0(9, 0.0);
  auto cfg = baseConfig(Algorithm::lpp_sgd, 600);
  cfg.workers = 1;
  cfg.updaters = 3;
  cfg.force_partial = true;
  cfg.lr = LrSchedule::constant(0.1, 600);
  const auto r = runExperiment(cfg, obj, x0);
  std::map<std::uint32_t, std::size_t> steps;
  for (const auto& rec : r.records) ++steps[rec.updater];
  const auto part = obj->defaultPartition(3);
  std::vector<double> oracle = x0;
  std::vector<std::size_t> batch;
  for (std::size_t rank = 1; rank <= 3; ++rank) {
    BatchSampler sampler(obj->data().size(), streamSeed(cfg.seed, 0, rank), cfg.sampling);
    const auto b = part.block(rank);
    for (std::size_t n = 0; n < steps[static_cast<std::uint32_t>(rank)]; ++n) {
      sampler.next(cfg.batch, batch);
      for (std::size_t e = b.begin; e < b.end; ++e) {
        double g = 0.0;
        for (auto k : batch) g += oracle[e] - obj->data().row(k)[e];
        oracle[e] -= 0.1 * (g / static_cast<double>(batch.size()));
      }
    }
  }
  EXPECT_LE(maxAbsDiff(r.final_params[0], oracle), 1e-12);
}

TEST(Engine, RendezvousAveragesTwoWorkers) {
  AllReduceRendezvous rv(2, 2);
  std::vector<double> m0, m1;
  std::thread t([&] { m1 = rv.allReduce(1, std::vector<double>{3.0, 5.0}, false, 7).mean; });
  const auto res = rv.allReduce(0, std::vector<double>{1.0, 3.0}, false, 5);
  t.join();
  m0 = res.mean;
  EXPECT_EQ(m0, (std::vector<double>{2.0, 4.0}));
  EXPECT_EQ(m1, m0);
  EXPECT_EQ(res.counters, (std::vector<std::uint64_t>{5, 7}));
  EXPECT_FALSE(res.all_final);
}

TEST(Engine, BudgetIsExactAndSumIsConserved) {
  auto obj = mlp();
  const auto x0 = obj->initialParams(2);
  for (auto algo : {Algorithm::lap_sgd, Algorithm::lpp_sgd}) {
    auto cfg = baseConfig(algo, 400);
    cfg.updaters = 3;
    cfg.record = RecordLevel::full;
    const auto r = runExperiment(cfg, obj, x0);
    std::vector<std::size_t> per(cfg.workers, 0);
    for (const auto& rec : r.records) ++per[rec.worker];
    for (std::size_t q = 0; q < cfg.workers; ++q) {
      EXPECT_EQ(per[q], cfg.budget);
      EXPECT_EQ(r.minibatches[q], cfg.budget);
    }
    // averaging preserves the sum over workers, so it equals Q x0 minus every step taken
    std::vector<double> expect(x0.size());
    for (std::size_t e = 0; e < x0.size(); ++e) expect[e] = static_cast<double>(cfg.workers) * x0[e];
    for (const auto& rec : r.records) {
      for (std::size_t e = 0; e < rec.delta.size(); ++e) expect[rec.block_begin + e] -= rec.delta[e];
    }
    std::vector<double> sum(x0.size(), 0.0);
    for (const auto& x : r.final_params) {
      for (std::size_t e = 0; e < x.size(); ++e) sum[e] += x[e];
    }
    EXPECT_LE(maxAbsDiff(sum, expect), 1e-9);
    // the last round is final for everyone, after which all models agree
    ASSERT_FALSE(r.rounds.empty());
    for (const auto& p : r.rounds.back().workers) EXPECT_TRUE(p.final_round);
    EXPECT_LE(maxAbsDiff(r.final_params[0], r.final_params[1]), 1e-12);
  }
}

TEST(Engine, QuiescentReplayReproducesAveragedModels) {
  auto obj = mlp();
  const auto x0 = obj->initialParams(3);
  for (auto algo : {Algorithm::lap_sgd, Algorithm::lpp_sgd}) {
    auto cfg = baseConfig(algo, 300);
    cfg.updaters = 3;
    cfg.quiescent = true;
    cfg.record = RecordLevel::full;
    const auto r = runExperiment(cfg, obj, x0);
    const auto replay = reconstructMinorViews(r.records, r.rounds, x0, cfg.workers);
    ASSERT_EQ(replay.xbar.size(), r.rounds.size() + 1);
    double worst = 0.0;
    for (std::size_t j = 0; j < r.rounds.size(); ++j) {
      worst = std::max(worst, maxAbsDiff(replay.xbar[j + 1], r.rounds[j].mean));
      for (const auto& p : r.rounds[j].workers) worst = std::max(worst, maxAbsDiff(replay.xbar[j + 1], p.post_apply));
    }
    EXPECT_LE(worst, 1e-12);
    for (std::size_t q = 0; q < cfg.workers; ++q) {
      EXPECT_LE(maxAbsDiff(replay.final_views[q], r.final_params[q]), 1e-12);
    }
  }
}

TEST(Engine, AsyncRunsConverge) {
  auto obj = quadratic(16);
  const auto& q = static_cast<const Quadratic&>(*obj);
  const std::vector<double> x0(16, 0.0);
  for (auto algo : {Algorithm::lap_sgd, Algorithm::lpp_sgd}) {
    auto cfg = baseConfig(algo, 3000);
    cfg.updaters = 4;
    cfg.lr = LrSchedule{LrKind::cosine, 0.05, 0.2, 100, 3000, {}, 0.1};
    const auto r = runExperiment(cfg, obj, x0);
    EXPECT_LE(maxAbsDiff(r.consensus(), q.minimizer()), 0.1);
    EXPECT_LT(r.metrics.back().train_loss, r.metrics.front().train_loss);
  }
}

TEST(Engine, ConfigErrors) {
  auto cfg = baseConfig(Algorithm::mb_sgd, 10);
  cfg.updaters = 4;
  try {
    cfg.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "updaters");
  }
  cfg = baseConfig(Algorithm::lap_sgd, 10);
  cfg.workers = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = baseConfig(Algorithm::lap_sgd, 10);
  cfg.batch = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = baseConfig(Algorithm::lap_sgd, 10);
  cfg.budget = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_EQ(parseAlgorithm("lpp"), Algorithm::lpp_sgd);
  EXPECT_EQ(parseAlgorithm("mb_sgd"), Algorithm::mb_sgd);
  EXPECT_FALSE(parseAlgorithm("adam").has_value());
}

TEST(Engine, LppRejectsPartitionWithWrongBlockCount) {
  auto obj = mlp();
  auto cfg = baseConfig(Algorithm::lpp_sgd, 50);
  cfg.updaters = 2;
  cfg.partition = obj->defaultPartition(3);
  EXPECT_THROW(runExperiment(cfg, obj, obj->initialParams(1)), Error);
}
