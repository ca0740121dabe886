#pragma once

// Runs the four training algorithms under one budget and metrics regime.
//
//   mb_sgd  - synchronous minibatch data-parallel SGD (gradients averaged every step)
//   pl_sgd  - synchronous local SGD, models averaged every K steps
//   lap_sgd - per worker: U lock-free updaters on a shared store plus one
//             averaging thread that all-reduces with its peers and applies
//             the mean-delta in place without pausing the updaters
//   lpp_sgd - lap_sgd with the partial-gradient block selection rule
//
// Workers are thread groups inside one process; each owns a private ParamStore.
// The budget T is the number of minibatches each worker processes.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "lppsgd/errors.hpp"
#include "lppsgd/instrumentation.hpp"
#include "lppsgd/objectives.hpp"
#include "lppsgd/paramstore.hpp"
#include "lppsgd/partition.hpp"
#include "lppsgd/records.hpp"
#include "lppsgd/rendezvous.hpp"
#include "lppsgd/schedules.hpp"
#include "lppsgd/stats.hpp"

namespace lppsgd {

enum class Algorithm { mb_sgd, pl_sgd, lap_sgd, lpp_sgd };

inline std::string toString(Algorithm a) {
  switch (a) {
    case Algorithm::mb_sgd: return "mb_sgd";
    case Algorithm::pl_sgd: return "pl_sgd";
    case Algorithm::lap_sgd: return "lap_sgd";
    case Algorithm::lpp_sgd: return "lpp_sgd";
  }
  return "?";
}

inline std::optional<Algorithm> parseAlgorithm(const std::string& s) {
  if (s == "mb_sgd" || s == "mb") return Algorithm::mb_sgd;
  if (s == "pl_sgd" || s == "pl") return Algorithm::pl_sgd;
  if (s == "lap_sgd" || s == "lap") return Algorithm::lap_sgd;
  if (s == "lpp_sgd" || s == "lpp") return Algorithm::lpp_sgd;
  return std::nullopt;
}

inline bool isAsync(Algorithm a) { return a == Algorithm::lap_sgd || a == Algorithm::lpp_sgd; }

// summary: orders, flops and provenance tags per update.
// full: additionally the snapshot and step of every update and round.
enum class RecordLevel { summary, full };

struct RunConfig {
  Algorithm algo = Algorithm::lap_sgd;
  std::size_t workers = 2;   // Q
  std::size_t updaters = 4;  // U
  std::size_t batch = 16;    // B_loc
  std::uint64_t budget = 1000;  // T, minibatches per worker
  LrSchedule lr;
  SyncScheme sync;
  std::uint64_t warm_start = 100;  // T_st
  std::uint64_t seed = 1;
  std::uint64_t eval_interval = 0;  // minibatches per worker between metric rows; 0 = start/end only
  SamplingMode sampling = SamplingMode::iid;
  RecordLevel record = RecordLevel::summary;
  std::size_t provenance_sample = 32;
  // Test-only: averagers pause their own updaters around each round.
  bool quiescent = false;
  // Test-only: lpp updaters always select their own block.
  bool force_partial = false;
  // Updaters yield the core after a random half of their steps. Unset = only when the host has
  // fewer hardware threads than Q * (U + 1); without it a time-sliced host
  // starves the averagers and almost no rounds happen.
  std::optional<bool> cooperative_yield;
  // Overrides the objective's default U-way partition.
  std::optional<BlockPartition> partition;

  bool yieldAfterStep() const {
    if (cooperative_yield) return *cooperative_yield;
    return std::thread::hardware_concurrency() < workers * (updaters + 1);
  }

  void validate() const {
    if (workers == 0) throw ConfigError("workers", "must be >= 1");
    if (updaters == 0) throw ConfigError("updaters", "must be >= 1");
    if ((algo == Algorithm::mb_sgd || algo == Algorithm::pl_sgd) && updaters != 1) {
      throw ConfigError("updaters", toString(algo) + " requires updaters = 1");
    }
    if (batch == 0) throw ConfigError("batch", "must be >= 1");
    if (budget == 0) throw ConfigError("budget", "must be >= 1");
    try {
      lr.validate();
    } catch (const ValidationError& e) {
      throw ConfigError("lr", e.what());
    }
    try {
      sync.validate();
    } catch (const ValidationError& e) {
      throw ConfigError("sync_h", e.what());
    }
  }
};

// Independent per-stream seed derived from (seed, worker, stream).
inline std::uint64_t streamSeed(std::uint64_t seed, std::uint64_t worker, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(worker), static_cast<std::uint32_t>(stream)};
  std::uint64_t out[1];
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out[0];
}

struct EvalPoint {
  double wall_ms = 0.0;
  std::uint64_t minibatches = 0;  // across all workers
  std::uint64_t round = 0;
  std::uint64_t flops = 0;
  std::vector<std::uint64_t> counters;  // per worker
  std::vector<double> params;
};

struct RunResult {
  Algorithm algo = Algorithm::lap_sgd;
  std::vector<double> initial;
  std::vector<std::vector<double>> final_params;  // per worker
  std::vector<UpdateRecord> records;              // async only, sorted by (worker, u)
  std::vector<AveragingRound> rounds;
  std::vector<EvalPoint> evals;
  std::vector<std::uint64_t> minibatches;  // processed per worker
  std::vector<std::uint64_t> counter_final;  // shared counter per worker
  std::uint64_t total_flops = 0;
  double wall_ms = 0.0;
  std::vector<MetricsRow> metrics;

  std::vector<double> consensus() const {
    std::vector<double> out(initial.size(), 0.0);
    for (const auto& p : final_params) {
      for (std::size_t e = 0; e < out.size(); ++e) out[e] += p[e];
    }
    for (double& v : out) v /= static_cast<double>(final_params.size());
    return out;
  }
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double msSince(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Spin, then yield. Re-reads happen after every pause.
class Backoff {
 public:
  void pause() {
    if (spins_ < 64) {
      ++spins_;
      return;
    }
    std::this_thread::yield();
  }
  void reset() { spins_ = 0; }

 private:
  int spins_ = 0;
};

}  // namespace detail

// Per-worker shared state: the store plus the coordination flags its threads use.
struct WorkerContext {
  std::size_t id = 0;
  std::unique_ptr<ParamStore> store;
  BlockPartition partition;
  std::shared_ptr<const Objective> objective;
  std::atomic<std::size_t> updaters_done{0};
  std::atomic<std::uint64_t> processed{0};
  // Quiescent-mode gate.
  std::atomic<bool> pause{false};
  std::atomic<int> in_flight{0};
};

struct RunShared {
  std::atomic<std::uint64_t> flops{0};
  std::atomic<bool> abort{false};
};

struct UpdaterLog {
  std::vector<UpdateRecord> records;
};

struct AveragerLog {
  std::vector<std::pair<std::uint64_t, RoundParticipant>> rounds;
  std::vector<std::vector<double>> means;  // worker 0 only
  std::vector<EvalPoint> evals;            // worker 0 only
};

// Updater loop for updater `rank` (1..U) of ctx's worker.
inline void runUpdater(WorkerContext& ctx, const RunConfig& cfg, std::size_t rank, RunShared& shared,
                       UpdaterLog& log) {
  const Objective& obj = *ctx.objective;
  ParamStore& store = *ctx.store;
  BatchSampler sampler(obj.data().size(), streamSeed(cfg.seed, ctx.id, rank), cfg.sampling);
  Snapshot snap;
  GradResult g;
  std::vector<std::size_t> batch;
  std::vector<double> delta;
  const bool partial = cfg.algo == Algorithm::lpp_sgd;
  const bool full_log = cfg.record == RecordLevel::full;
  const bool yield = cfg.yieldAfterStep();
  // A coin per step keeps the updaters out of a fixed round-robin cycle,
  // which would pin each rank to one parity of s.
  std::mt19937_64 jitter(streamSeed(cfg.seed, ctx.id, 1000 + rank));
  std::bernoulli_distribution coin(0.5);
  while (!shared.abort.load(std::memory_order_relaxed)) {
    if (cfg.quiescent) {
      while (true) {
        while (ctx.pause.load()) std::this_thread::yield();
        ctx.in_flight.fetch_add(1);
        if (!ctx.pause.load()) break;
        ctx.in_flight.fetch_sub(1);
      }
    }
    const std::uint64_t s = store.readAndInc();
    if (s >= cfg.budget) {
      if (cfg.quiescent) ctx.in_flight.fetch_sub(1);
      break;
    }
    store.collectInto(snap);
    snap.order = s;
    BlockChoice choice{0, SelectionReason::warm_start};
    if (partial) {
      choice = cfg.force_partial ? BlockChoice{rank, SelectionReason::alternate_partial}
                                 : selectBlock(s, cfg.warm_start, rank);
    }
    const IndexRange range = ctx.partition.block(choice.block_id);
    sampler.next(cfg.batch, batch);
    obj.gradBlock(snap.values, range, batch, g);
    const double lr = cfg.lr.at(s);
    delta.resize(g.values.size());
    for (std::size_t e = 0; e < delta.size(); ++e) delta[e] = lr * g.values[e];
    const std::uint64_t u = store.atomicSubAssign(range, delta);
    ctx.processed.fetch_add(1, std::memory_order_relaxed);
    shared.flops.fetch_add(g.flops, std::memory_order_relaxed);
    if (cfg.quiescent) ctx.in_flight.fetch_sub(1);

    UpdateRecord rec;
    rec.worker = static_cast<std::uint32_t>(ctx.id);
    rec.updater = static_cast<std::uint32_t>(rank);
    rec.snapshot_order = s;
    rec.update_order = u;
    rec.block = static_cast<std::uint32_t>(choice.block_id);
    rec.block_begin = range.begin;
    rec.lr = lr;
    rec.flops = g.flops;
    rec.backward_flops = g.backward_flops;
    rec.provenance = snap.provenance;
    if (full_log) {
      rec.snapshot = snap.values;
      rec.delta = delta;
    }
    log.records.push_back(std::move(rec));
    if (yield && coin(jitter)) std::this_thread::yield();
  }
  ctx.updaters_done.fetch_add(1);
}

// Averaging loop for ctx's worker. Worker 0 also captures
// evaluation points from the all-reduced mean.
inline void runAverager(WorkerContext& ctx, const RunConfig& cfg, AllReduceRendezvous& rendezvous,
                        RunShared& shared, detail::Clock::time_point t0, AveragerLog& log) {
  ParamStore& store = *ctx.store;
  const bool full_log = cfg.record == RecordLevel::full;
  const std::size_t U = cfg.updaters;
  std::uint64_t s_pre = 0;
  std::uint64_t j = 0;
  std::uint64_t next_eval = cfg.eval_interval == 0 ? UINT64_MAX : cfg.eval_interval * cfg.workers;
  detail::Backoff backoff;
  Snapshot snap;
  std::vector<double> delta(store.size());
  while (true) {
    if (shared.abort.load(std::memory_order_relaxed)) return;
    std::uint64_t s_cur = std::min(store.read(), cfg.budget);
    bool done = ctx.updaters_done.load() == U;
    if (!done && s_cur - s_pre < cfg.sync.at(s_cur)) {
      backoff.pause();
      continue;
    }
    backoff.reset();
    if (cfg.quiescent) {
      ctx.pause.store(true);
      while (ctx.in_flight.load() > 0) std::this_thread::yield();
      s_cur = std::min(store.read(), cfg.budget);
      done = ctx.updaters_done.load() == U;
    }
    ++j;
    RoundParticipant part;
    part.snapshot_order = s_cur;
    part.minor_count = s_cur - s_pre;
    part.final_round = done;
    s_pre = s_cur;
    store.collectInto(snap);
    const auto reduced = rendezvous.allReduce(ctx.id, snap.values, done, ctx.processed.load());
    for (std::size_t e = 0; e < delta.size(); ++e) delta[e] = reduced.mean[e] - snap.values[e];
    part.stamp = store.nextUpdateOrder();
    store.atomicAddAssign(delta, part.stamp);
    if (full_log) {
      part.snapshot = snap.values;
      part.delta = delta;
      if (cfg.quiescent) part.post_apply = store.values();
    }
    if (cfg.quiescent) ctx.pause.store(false);
    log.rounds.emplace_back(j, std::move(part));
    if (ctx.id == 0) {
      log.means.push_back(reduced.mean);
      std::uint64_t total = 0;
      for (auto c : reduced.counters) total += c;
      if (total >= next_eval && !reduced.all_final) {
        EvalPoint ev;
        ev.wall_ms = detail::msSince(t0);
        ev.minibatches = total;
        ev.round = j;
        ev.flops = shared.flops.load(std::memory_order_relaxed);
        ev.counters = reduced.counters;
        ev.params = reduced.mean;
        log.evals.push_back(std::move(ev));
        while (next_eval <= total) next_eval += cfg.eval_interval * cfg.workers;
      }
    }
    if (reduced.all_final) return;
  }
}

namespace detail {

inline std::vector<std::size_t> sliceOf(const std::vector<std::size_t>& draw, std::size_t q, std::size_t batch,
                                        SamplingMode mode) {
  if (mode == SamplingMode::full) return draw;
  return std::vector<std::size_t>(draw.begin() + static_cast<std::ptrdiff_t>(q * batch),
                                  draw.begin() + static_cast<std::ptrdiff_t>((q + 1) * batch));
}

inline EvalPoint evalPoint(double wall_ms, std::uint64_t minibatches, std::uint64_t round, std::uint64_t flops,
                           std::vector<double> params) {
  EvalPoint ev;
  ev.wall_ms = wall_ms;
  ev.minibatches = minibatches;
  ev.round = round;
  ev.flops = flops;
  ev.params = std::move(params);
  return ev;
}

}  // namespace detail

// Synchronous minibatch SGD: x <- x - lr * mean_q grad(x, B_q). The baseline
// sampler draws Q * B indices per step from one seeded stream; worker q takes
// the q-th slice.
inline RunResult runMbSgd(const RunConfig& cfg, const Objective& obj, std::span<const double> x0) {
  cfg.validate();
  RunResult res;
  res.algo = Algorithm::mb_sgd;
  res.initial.assign(x0.begin(), x0.end());
  const std::size_t Q = cfg.workers;
  const std::size_t d = obj.dim();
  std::vector<double> x(x0.begin(), x0.end());
  BatchSampler sampler(obj.data().size(), streamSeed(cfg.seed, 0, 0), cfg.sampling);
  std::vector<std::size_t> draw;
  GradResult g;
  std::vector<double> sum(d);
  std::uint64_t flops = 0;
  double wall = 0.0;
  res.evals.push_back(detail::evalPoint(0.0, 0, 0, 0, x));
  for (std::uint64_t k = 0; k < cfg.budget; ++k) {
    const auto t0 = detail::Clock::now();
    sampler.next(Q * cfg.batch, draw);
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t q = 0; q < Q; ++q) {
      const auto batch = detail::sliceOf(draw, q, cfg.batch, cfg.sampling);
      obj.gradBlock(x, {0, d}, batch, g);
      for (std::size_t e = 0; e < d; ++e) sum[e] += g.values[e];
      flops += g.flops;
    }
    const double lr = cfg.lr.at(k);
    for (std::size_t e = 0; e < d; ++e) x[e] -= lr * (sum[e] / static_cast<double>(Q));
    wall += detail::msSince(t0);
    if (cfg.eval_interval != 0 && (k + 1) % cfg.eval_interval == 0 && k + 1 < cfg.budget) {
      res.evals.push_back(detail::evalPoint(wall, (k + 1) * Q, k + 1, flops, x));
    }
  }
  res.evals.push_back(detail::evalPoint(wall, cfg.budget * Q, cfg.budget, flops, x));
  res.final_params.assign(Q, x);
  res.minibatches.assign(Q, cfg.budget);
  res.counter_final.assign(Q, cfg.budget);
  res.total_flops = flops;
  res.wall_ms = wall;
  return res;
}

// Synchronous local SGD: every worker steps on its own model; models are
// averaged whenever K = syncK(s) steps have passed since the last average,
// and once more at the end of the budget.
inline RunResult runPlSgd(const RunConfig& cfg, const Objective& obj, std::span<const double> x0) {
  cfg.validate();
  RunResult res;
  res.algo = Algorithm::pl_sgd;
  res.initial.assign(x0.begin(), x0.end());
  const std::size_t Q = cfg.workers;
  const std::size_t d = obj.dim();
  std::vector<std::vector<double>> xs(Q, std::vector<double>(x0.begin(), x0.end()));
  BatchSampler sampler(obj.data().size(), streamSeed(cfg.seed, 0, 0), cfg.sampling);
  std::vector<std::size_t> draw;
  GradResult g;
  std::uint64_t flops = 0;
  std::uint64_t s_pre = 0;
  std::uint64_t rounds = 0;
  double wall = 0.0;
  auto average = [&]() {
    std::vector<double> mean(d, 0.0);
    for (std::size_t q = 0; q < Q; ++q) {
      for (std::size_t e = 0; e < d; ++e) mean[e] += xs[q][e];
    }
    for (double& v : mean) v /= static_cast<double>(Q);
    return mean;
  };
  res.evals.push_back(detail::evalPoint(0.0, 0, 0, 0, std::vector<double>(x0.begin(), x0.end())));
  for (std::uint64_t k = 0; k < cfg.budget; ++k) {
    const auto t0 = detail::Clock::now();
    sampler.next(Q * cfg.batch, draw);
    const double lr = cfg.lr.at(k);
    for (std::size_t q = 0; q < Q; ++q) {
      const auto batch = detail::sliceOf(draw, q, cfg.batch, cfg.sampling);
      obj.gradBlock(xs[q], {0, d}, batch, g);
      for (std::size_t e = 0; e < d; ++e) xs[q][e] -= lr * g.values[e];
      flops += g.flops;
    }
    const std::uint64_t s_cur = k + 1;
    if (s_cur - s_pre >= cfg.sync.at(s_cur) || s_cur == cfg.budget) {
      const auto mean = average();
      for (auto& x : xs) x = mean;
      s_pre = s_cur;
      ++rounds;
    }
    wall += detail::msSince(t0);
    if (cfg.eval_interval != 0 && s_cur % cfg.eval_interval == 0 && s_cur < cfg.budget) {
      res.evals.push_back(detail::evalPoint(wall, s_cur * Q, rounds, flops, average()));
    }
  }
  res.evals.push_back(detail::evalPoint(wall, cfg.budget * Q, rounds, flops, average()));
  res.final_params = xs;
  res.minibatches.assign(Q, cfg.budget);
  res.counter_final.assign(Q, cfg.budget);
  res.total_flops = flops;
  res.wall_ms = wall;
  return res;
}

// LAP-SGD / LPP-SGD: Q x (U updaters + 1 averager) threads.
inline RunResult runAsync(const RunConfig& cfg, std::shared_ptr<const Objective> objective,
                          std::span<const double> x0) {
  cfg.validate();
  if (!isAsync(cfg.algo)) throw ConfigError("algo", "runAsync needs lap_sgd or lpp_sgd");
  const Objective& obj = *objective;
  const std::size_t Q = cfg.workers;
  const std::size_t U = cfg.updaters;
  const std::size_t d = obj.dim();
  if (x0.size() != d) throw ShapeError("initial parameters have wrong length");

  BlockPartition partition;
  if (cfg.partition) {
    partition = *cfg.partition;
  } else if (cfg.algo == Algorithm::lpp_sgd) {
    try {
      partition = obj.defaultPartition(U);
    } catch (const ValidationError& e) {
      throw ConfigError("updaters", e.what());
    }
  } else {
    partition = makePartition(d, {0, d});
  }
  if (partition.dim() != d) throw ConfigError("partition", "dimension mismatch");
  if (cfg.algo == Algorithm::lpp_sgd && partition.partitions() != U) {
    throw ConfigError("updaters", "lpp_sgd needs one partition block per updater");
  }

  const auto tracked = chooseTrackedIndices(d, cfg.provenance_sample, streamSeed(cfg.seed, 0xffff, 0));
  std::vector<std::unique_ptr<WorkerContext>> ctxs;
  for (std::size_t q = 0; q < Q; ++q) {
    auto ctx = std::make_unique<WorkerContext>();
    ctx->id = q;
    ctx->store = std::make_unique<ParamStore>(x0, tracked);
    ctx->partition = partition;
    ctx->objective = objective;
    ctxs.push_back(std::move(ctx));
  }
  AllReduceRendezvous rendezvous(Q, d);
  RunShared shared;
  std::vector<UpdaterLog> ulogs(Q * U);
  std::vector<AveragerLog> alogs(Q);
  std::vector<std::exception_ptr> errors(Q * (U + 1));
  std::mutex err_mu;

  auto guard = [&](std::size_t slot, auto&& body) {
    return [&, slot, body]() mutable {
      try {
        body();
      } catch (...) {
        {
          std::lock_guard lock(err_mu);
          errors[slot] = std::current_exception();
        }
        shared.abort.store(true);
        rendezvous.abort();
      }
    };
  };

  const auto t0 = detail::Clock::now();
  std::vector<std::thread> threads;
  try {
    for (std::size_t q = 0; q < Q; ++q) {
      for (std::size_t r = 1; r <= U; ++r) {
        const std::size_t slot = q * U + (r - 1);
        threads.emplace_back(guard(slot, [&, q, r, slot] { runUpdater(*ctxs[q], cfg, r, shared, ulogs[slot]); }));
      }
      threads.emplace_back(guard(Q * U + q, [&, q] { runAverager(*ctxs[q], cfg, rendezvous, shared, t0, alogs[q]); }));
    }
  } catch (const std::system_error& e) {
    shared.abort.store(true);
    rendezvous.abort();
    for (auto& t : threads) t.join();
    throw RunError(std::string("thread spawn failed: ") + e.what());
  }
  for (auto& t : threads) t.join();
  const double wall = detail::msSince(t0);
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  RunResult res;
  res.algo = cfg.algo;
  res.initial.assign(x0.begin(), x0.end());
  res.wall_ms = wall;
  res.total_flops = shared.flops.load();
  for (auto& ul : ulogs) {
    for (auto& r : ul.records) res.records.push_back(std::move(r));
  }
  std::sort(res.records.begin(), res.records.end(), [](const auto& a, const auto& b) {
    return a.worker != b.worker ? a.worker < b.worker : a.update_order < b.update_order;
  });
  const std::size_t J = alogs[0].rounds.size();
  for (std::size_t q = 1; q < Q; ++q) {
    if (alogs[q].rounds.size() != J) throw RunError("averagers disagree on the number of rounds");
  }
  res.rounds.resize(J);
  for (std::size_t j = 0; j < J; ++j) {
    res.rounds[j].j = j + 1;
    for (std::size_t q = 0; q < Q; ++q) res.rounds[j].workers.push_back(std::move(alogs[q].rounds[j].second));
    if (j < alogs[0].means.size()) res.rounds[j].mean = std::move(alogs[0].means[j]);
  }
  for (auto& ctx : ctxs) {
    res.final_params.push_back(ctx->store->values());
    res.minibatches.push_back(ctx->processed.load());
    res.counter_final.push_back(ctx->store->read());
  }
  res.evals.push_back(detail::evalPoint(0.0, 0, 0, 0, res.initial));
  res.evals[0].counters.assign(Q, 0);
  for (auto& ev : alogs[0].evals) res.evals.push_back(std::move(ev));
  std::uint64_t total = 0;
  for (auto m : res.minibatches) total += m;
  auto last = detail::evalPoint(wall, total, J, res.total_flops, res.consensus());
  last.counters = res.minibatches;
  res.evals.push_back(std::move(last));
  return res;
}

// Metric rows from a run's evaluation points: full-dataset loss and squared
// gradient norm at each captured (averaged) model, plus the running
// good-event fraction for asynchronous runs.
inline std::vector<MetricsRow> computeMetrics(const RunResult& res, const Objective& obj, std::uint64_t seed,
                                              std::size_t batch) {
  std::vector<MetricsRow> rows;
  DelayStats delays;
  const bool async = isAsync(res.algo) && !res.records.empty();
  if (async) delays = buildDelayStats(res.records, res.rounds);
  for (const auto& ev : res.evals) {
    MetricsRow row;
    row.algo = toString(res.algo);
    row.seed = seed;
    row.wall_ms = ev.wall_ms;
    row.samples = ev.minibatches * batch;
    row.round = ev.round;
    row.train_loss = obj.fullLoss(ev.params);
    row.grad_norm_sq = stats::squaredNorm(obj.fullGradient(ev.params));
    row.flops = ev.flops;
    row.p_hat = 1.0;
    if (async && !ev.counters.empty()) {
      std::size_t good = 0;
      std::size_t seen = 0;
      // events are aligned with records sorted by (worker, u)
      for (std::size_t k = 0; k < res.records.size(); ++k) {
        const auto& r = res.records[k];
        if (r.snapshot_order >= ev.counters[r.worker]) continue;
        const auto cls = delays.events[k].cls;
        if (cls == DelayClass::unclassified) continue;
        ++seen;
        if (cls == DelayClass::good) ++good;
      }
      row.p_hat = seen == 0 ? 1.0 : static_cast<double>(good) / static_cast<double>(seen);
    }
    rows.push_back(row);
  }
  return rows;
}

// Dispatches to the algorithm, then derives metric rows.
inline RunResult runExperiment(const RunConfig& cfg, std::shared_ptr<const Objective> objective,
                               std::span<const double> x0) {
  cfg.validate();
  RunResult res;
  switch (cfg.algo) {
    case Algorithm::mb_sgd: res = runMbSgd(cfg, *objective, x0); break;
    case Algorithm::pl_sgd: res = runPlSgd(cfg, *objective, x0); break;
    case Algorithm::lap_sgd:
    case Algorithm::lpp_sgd: res = runAsync(cfg, objective, x0); break;
  }
  res.metrics = computeMetrics(res, *objective, cfg.seed, cfg.batch);
  return res;
}

}  // namespace lppsgd
