#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "lppsgd/objectives.hpp"

using namespace lppsgd;

namespace {

std::shared_ptr<const Dataset> blobs(std::size_t n, std::size_t f, std::size_t k, std::uint64_t seed = 1) {
  return std::make_shared<const Dataset>(gaussianBlobs(n, f, k, 3.0, 1.0, seed));
}

std::vector<double> randomPoint(std::size_t d, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> x(d);
  for (double& v : x) v = n(rng);
  return x;
}

// Central differences on the batch loss, compared entrywise to gradBlock.
void checkFiniteDifferences(const Objective& obj, std::span<const double> x0, IndexRange block,
                            std::span<const std::size_t> batch) {
  const auto g = obj.gradBlock(x0, block, batch);
  ASSERT_EQ(g.values.size(), block.size());
  std::vector<double> x(x0.begin(), x0.end());
  const double h = 1e-6;
  for (std::size_t e = block.begin; e < block.end; ++e) {
    const double keep = x[e];
    x[e] = keep + h;
    const double up = obj.loss(x, batch);
    x[e] = keep - h;
    const double down = obj.loss(x, batch);
    x[e] = keep;
    const double fd = (up - down) / (2 * h);
    const double an = g.values[e - block.begin];
    EXPECT_LE(std::abs(fd - an), 1e-5 * std::max(1.0, std::abs(fd))) << "index " << e;
  }
}

// Plain reference forward pass written independently of the library.
double referenceMlpLoss(const Dataset& ds, const std::vector<std::size_t>& w, std::span<const double> x,
                        std::size_t k) {
  std::vector<double> a(ds.row(k).begin(), ds.row(k).end());
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    std::vector<double> z(w[l + 1]);
    for (std::size_t o = 0; o < w[l + 1]; ++o) {
      double s = x[off + w[l] * w[l + 1] + o];
      for (std::size_t i = 0; i < w[l]; ++i) s += x[off + o * w[l] + i] * a[i];
      z[o] = l + 2 < w.size() ? std::tanh(s) : s;
    }
    off += w[l] * w[l + 1] + w[l + 1];
    a = z;
  }
  double sum = 0.0;
  for (double v : a) sum += std::exp(v);
  return std::log(sum) - a[static_cast<std::size_t>(ds.classLabel(k))];
}

}  // namespace

TEST(Objectives, QuadraticExample) {
  Dataset ds;
  ds.features = 2;
  ds.push(std::vector<double>{3.0, 4.0}, 0.0);
  Quadratic q(std::make_shared<const Dataset>(ds));
  const std::vector<double> x{0.0, 0.0};
  const std::vector<std::size_t> b{0};
  EXPECT_DOUBLE_EQ(q.loss(x, b), 12.5);
  EXPECT_EQ(q.gradBlock(x, {0, 2}, b).values, (std::vector<double>{-3.0, -4.0}));
  EXPECT_EQ(q.minimizer(), (std::vector<double>{3.0, 4.0}));
}

TEST(Objectives, LogisticAtZeroIsLn2) {
  LogisticRegression lr(blobs(40, 3, 2));
  const std::vector<double> x(lr.dim(), 0.0);
  EXPECT_NEAR(lr.fullLoss(x), std::log(2.0), 1e-15);
}

TEST(Objectives, MlpMatchesReferenceForwardPass) {
  auto ds = blobs(20, 3, 4);
  const std::vector<std::size_t> widths{3, 5, 6, 4};
  Mlp m(ds, widths);
  EXPECT_EQ(m.dim(), 3u * 5 + 5 + 5 * 6 + 6 + 6 * 4 + 4);
  const auto x = m.initialParams(7);
  for (std::size_t k = 0; k < ds->size(); ++k) {
    const std::vector<std::size_t> b{k};
    EXPECT_NEAR(m.loss(x, b), referenceMlpLoss(*ds, widths, x, k), 1e-12);
  }
}

TEST(Objectives, FiniteDifferencesEveryObjectiveAndBlock) {
  auto ds = blobs(30, 4, 3, 5);
  std::vector<double> c{1.0, -2.0, 0.5, 3.0};
  Quadratic q(std::make_shared<const Dataset>(quadraticCenters(30, c, 0.5, 2)));
  Dataset bin = gaussianBlobs(30, 4, 2, 2.0, 1.0, 9);
  LogisticRegression lr(std::make_shared<const Dataset>(bin));
  Mlp m(ds, {4, 6, 5, 3});
  const std::vector<std::size_t> batch{0, 3, 7, 11, 19, 29, 3};
  for (const Objective* obj : std::initializer_list<const Objective*>{&q, &lr, &m}) {
    const auto x = randomPoint(obj->dim(), 17);
    for (std::size_t U = 1; U <= obj->layers().size() && U <= 3; ++U) {
      const auto p = obj->defaultPartition(U);
      for (std::size_t i = 0; i <= U; ++i) {
        SCOPED_TRACE(toString(obj->kind()) + " U=" + std::to_string(U) + " block " + std::to_string(i));
        checkFiniteDifferences(*obj, x, p.block(i), batch);
      }
    }
  }
}

TEST(Objectives, BlockGradientIsExactSliceOfFull) {
  auto ds = blobs(25, 4, 3, 2);
  Mlp m(ds, {4, 8, 8, 8, 3});
  const auto x = m.initialParams(3);
  const std::vector<std::size_t> batch{1, 2, 3, 5, 8, 13, 21};
  const auto full = m.gradBlock(x, {0, m.dim()}, batch);
  for (std::size_t U = 1; U <= 4; ++U) {
    const auto p = m.defaultPartition(U);
    for (std::size_t i = 1; i <= U; ++i) {
      const auto b = p.block(i);
      const auto g = m.gradBlock(x, b, batch);
      for (std::size_t e = b.begin; e < b.end; ++e) EXPECT_EQ(g.values[e - b.begin], full.values[e]);
    }
  }
}

TEST(Objectives, GradBlockArgumentErrors) {
  Mlp m(blobs(10, 2, 2), {2, 3, 2});
  const auto x = m.initialParams(1);
  const std::vector<std::size_t> b{0};
  const std::vector<std::size_t> oob{10};
  EXPECT_THROW(m.gradBlock(x, {0, m.dim() + 1}, b), BoundsError);
  EXPECT_THROW(m.gradBlock(x, {0, 3}, b), ValidationError);  // not layer aligned
  EXPECT_THROW(m.gradBlock(x, {0, m.dim()}, oob), BoundsError);
  EXPECT_THROW(m.gradBlock(x, {0, m.dim()}, std::vector<std::size_t>{}), ValidationError);
  std::vector<double> shorter(m.dim() - 1);
  EXPECT_THROW(m.loss(shorter, b), ShapeError);
  EXPECT_THROW(Mlp(blobs(10, 2, 3), {2, 2}), ValidationError);  // label 2 needs 3 outputs
}

TEST(Objectives, FlopsSavingsRatio) {
  Mlp m(blobs(16, 8, 8), {8, 8, 8, 8, 8});
  EXPECT_DOUBLE_EQ(flopsSavingsRatio(m, m.defaultPartition(1)), 0.0);
  EXPECT_DOUBLE_EQ(flopsSavingsRatio(m, m.defaultPartition(2)), 0.25);
  EXPECT_DOUBLE_EQ(flopsSavingsRatio(m, m.defaultPartition(4)), 0.375);

  // the measured backward counters agree with the model
  const auto x = m.initialParams(1);
  const std::vector<std::size_t> b{0, 1, 2};
  for (std::size_t U : {2u, 4u}) {
    const auto p = m.defaultPartition(U);
    const double full = static_cast<double>(m.gradBlock(x, p.block(0), b).backward_flops);
    double sum = 0.0;
    for (std::size_t i = 1; i <= U; ++i) sum += static_cast<double>(m.gradBlock(x, p.block(i), b).backward_flops);
    EXPECT_DOUBLE_EQ(1.0 - sum / (static_cast<double>(U) * full), flopsSavingsRatio(m, p));
  }
  Quadratic q(std::make_shared<const Dataset>(quadraticCenters(4, std::vector<double>{1, 2}, 0, 1)));
  EXPECT_THROW(flopsSavingsRatio(q, q.defaultPartition(1)), UnsupportedError);
}

TEST(Sampling, DeterministicGivenSeed) {
  for (auto mode : {SamplingMode::iid, SamplingMode::epoch}) {
    BatchSampler a(100, 42, mode), b(100, 42, mode), c(100, 43, mode);
    std::vector<std::size_t> x, y, z;
    bool differs = false;
    for (int i = 0; i < 20; ++i) {
      a.next(16, x);
      b.next(16, y);
      c.next(16, z);
      EXPECT_EQ(x, y);
      differs = differs || x != z;
    }
    EXPECT_TRUE(differs);
  }
}

TEST(Sampling, EpochModeVisitsEveryRowOncePerPass) {
  BatchSampler s(50, 3, SamplingMode::epoch);
  std::vector<std::size_t> ids, all;
  for (int i = 0; i < 10; ++i) {
    s.next(10, ids);
    all.insert(all.end(), ids.begin(), ids.end());
  }
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<int> seen(50, 0);
    for (std::size_t i = 0; i < 50; ++i) ++seen[all[static_cast<std::size_t>(pass) * 50 + i]];
    for (int v : seen) EXPECT_EQ(v, 1);
  }
}

TEST(Sampling, UniformChiSquare) {
  const std::size_t n = 100;
  const std::size_t draws = 1000000;
  BatchSampler s(n, 2024, SamplingMode::iid);
  std::vector<double> counts(n, 0.0);
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < draws / 1000; ++i) {
    s.next(1000, ids);
    for (auto id : ids) counts[id] += 1.0;
  }
  const double expect = static_cast<double>(draws) / static_cast<double>(n);
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
  // 99 degrees of freedom; the 0.999 quantile is about 148.2
  EXPECT_LT(chi2, 148.2);
}

TEST(Sampling, StochasticGradientIsUnbiased) {
  auto ds = blobs(40, 3, 3, 8);
  Mlp m(ds, {3, 4, 3});
  const auto x = m.initialParams(2);
  const auto full = m.fullGradient(x);
  BatchSampler s(ds->size(), 5, SamplingMode::iid);
  std::vector<double> mean(m.dim(), 0.0);
  std::vector<double> sq(m.dim(), 0.0);
  const int reps = 20000;
  std::vector<std::size_t> ids;
  for (int r = 0; r < reps; ++r) {
    s.next(4, ids);
    const auto g = m.gradBlock(x, {0, m.dim()}, ids);
    for (std::size_t e = 0; e < m.dim(); ++e) {
      mean[e] += g.values[e] / reps;
      sq[e] += g.values[e] * g.values[e] / reps;
    }
  }
  for (std::size_t e = 0; e < m.dim(); ++e) {
    const double se = std::sqrt(std::max(sq[e] - mean[e] * mean[e], 0.0) / reps);
    EXPECT_LE(std::abs(mean[e] - full[e]), 5.0 * se + 1e-12) << "index " << e;
  }
}

TEST(Sampling, VarianceShrinksWithBatch) {
  auto ds = blobs(64, 3, 2, 4);
  LogisticRegression lr(ds);
  const std::vector<std::vector<double>> pts{randomPoint(lr.dim(), 1), randomPoint(lr.dim(), 2)};
  const std::vector<IndexRange> blocks;
  const auto full = estimateMomentBounds(lr, pts, 30, std::nullopt, blocks, 1);
  EXPECT_EQ(full.variance, 0.0);
  EXPECT_GT(full.second_moment, 0.0);
  const auto b8 = estimateMomentBounds(lr, pts, 400, 8, blocks, 1);
  const auto b32 = estimateMomentBounds(lr, pts, 400, 32, blocks, 1);
  EXPECT_LT(b32.sigma(), b8.sigma());
  EXPECT_THROW(estimateMomentBounds(lr, pts, 29, 8, blocks, 1), ValidationError);
}

TEST(Sampling, FullModeReturnsWholeDataset) {
  BatchSampler s(7, 1, SamplingMode::full);
  std::vector<std::size_t> ids;
  s.next(3, ids);
  EXPECT_EQ(ids, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_THROW(s.next(0, ids), ValidationError);
  EXPECT_THROW(BatchSampler(0, 1, SamplingMode::iid), ValidationError);
}
