#pragma once

// Post-hoc analysis of a recorded asynchronous run: iteration orders, delay
// events, minor/major iteration views, the elastic consistency distance and
// the ergodic convergence-rate fit.
//
// Orders:
//   snapshot order s  - shared counter value read before an updater's snapshot
//   update order u    - per-worker rank of a model write (1-based)
//   iteration order   - (j, t): the t-th write after the j-th averaging apply
// A write belongs to epoch j when stamp_j <= u < stamp_{j+1}, where stamp_j
// is the update order the averager reserved just before its j-th apply.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lppsgd/errors.hpp"
#include "lppsgd/objectives.hpp"
#include "lppsgd/records.hpp"
#include "lppsgd/stats.hpp"

namespace lppsgd {

namespace detail {

inline std::vector<std::uint64_t> stampsOf(std::span<const AveragingRound> rounds, std::size_t q) {
  std::vector<std::uint64_t> out;
  out.reserve(rounds.size());
  for (const auto& r : rounds) {
    if (q >= r.workers.size()) throw ReconstructionError("round is missing a worker");
    out.push_back(r.workers[q].stamp);
  }
  return out;
}

// Number of averaging stamps <= u, i.e. the epoch index of update u.
inline std::size_t epochOf(std::span<const std::uint64_t> stamps, std::uint64_t u) {
  return static_cast<std::size_t>(std::upper_bound(stamps.begin(), stamps.end(), u) - stamps.begin());
}

inline std::size_t workerCount(std::span<const UpdateRecord> records,
                               std::span<const AveragingRound> rounds) {
  std::size_t Q = rounds.empty() ? 0 : rounds.front().workers.size();
  for (const auto& r : records) Q = std::max<std::size_t>(Q, r.worker + 1);
  return Q;
}

}  // namespace detail

// Fills record.round / record.t from the averaging stamps.
inline void assignIterationOrders(std::span<UpdateRecord> records,
                                  std::span<const AveragingRound> rounds) {
  const std::size_t Q = detail::workerCount(records, rounds);
  for (std::size_t q = 0; q < Q; ++q) {
    const auto stamps = rounds.empty() ? std::vector<std::uint64_t>{} : detail::stampsOf(rounds, q);
    std::vector<UpdateRecord*> mine;
    for (auto& r : records) {
      if (r.worker == q) mine.push_back(&r);
    }
    std::sort(mine.begin(), mine.end(),
              [](const auto* a, const auto* b) { return a->update_order < b->update_order; });
    std::int64_t prev_epoch = -1;
    std::int64_t t = 0;
    for (auto* r : mine) {
      const auto epoch = static_cast<std::int64_t>(detail::epochOf(stamps, r->update_order));
      t = (epoch == prev_epoch) ? t + 1 : 0;
      prev_epoch = epoch;
      r->round = epoch;
      r->t = t;
    }
  }
}

enum class DelayClass { good, bad, unclassified };

// Good iff every tracked snapshot element was produced by a write whose
// update order is at least `roundStart` (0 before the first averaging).
inline DelayClass classifyDelayEvent(const UpdateRecord& record, std::uint64_t roundStart) {
  if (record.provenance.empty()) return DelayClass::unclassified;
  for (std::uint64_t tag : record.provenance) {
    if (tag < roundStart) return DelayClass::bad;
  }
  return DelayClass::good;
}

// Round-start update order for a record: its worker's latest stamp <= u.
inline std::uint64_t roundStartFor(const UpdateRecord& record, std::span<const AveragingRound> rounds) {
  std::uint64_t k = 0;
  for (const auto& r : rounds) {
    const auto stamp = r.workers.at(record.worker).stamp;
    if (stamp <= record.update_order) k = std::max(k, stamp);
  }
  return k;
}

struct DelayEvent {
  std::uint32_t worker = 0;
  std::int64_t round = 0;
  std::int64_t t = 0;
  std::uint64_t update_order = 0;
  DelayClass cls = DelayClass::unclassified;
};

struct DelayStats {
  std::vector<DelayEvent> events;        // sorted by (worker, update order)
  std::vector<double> p_hat_by_t;        // pooled over (j, q); last bucket pools t >= size-1
  std::vector<std::size_t> count_by_t;
  double p_hat = 0.0;                    // overall good fraction
  double p_hat_min = 0.0;                // min over buckets with enough samples
  std::uint64_t k_bar = 0;               // max minor count over all rounds/workers
  std::size_t good = 0;
  std::size_t bad = 0;
  std::size_t unclassified = 0;
};

inline DelayStats buildDelayStats(std::span<const UpdateRecord> records,
                                  std::span<const AveragingRound> rounds, std::size_t buckets = 16,
                                  std::size_t minSamples = 30) {
  const std::size_t Q = detail::workerCount(records, rounds);
  std::vector<std::vector<std::uint64_t>> stamps(Q);
  for (std::size_t q = 0; q < Q; ++q) {
    if (!rounds.empty()) stamps[q] = detail::stampsOf(rounds, q);
  }
  DelayStats st;
  std::vector<std::size_t> good_by_t(buckets, 0);
  st.count_by_t.assign(buckets, 0);
  std::vector<const UpdateRecord*> order;
  for (const auto& r : records) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    return a->worker != b->worker ? a->worker < b->worker : a->update_order < b->update_order;
  });
  std::int64_t prev_epoch = -1;
  std::uint32_t prev_worker = std::numeric_limits<std::uint32_t>::max();
  std::int64_t t = 0;
  for (const auto* r : order) {
    const auto& s = stamps[r->worker];
    const std::size_t epoch = detail::epochOf(s, r->update_order);
    const std::uint64_t k = epoch == 0 ? 0 : s[epoch - 1];
    if (r->worker != prev_worker || static_cast<std::int64_t>(epoch) != prev_epoch) {
      t = 0;
    } else {
      ++t;
    }
    prev_worker = r->worker;
    prev_epoch = static_cast<std::int64_t>(epoch);
    DelayEvent ev{r->worker, static_cast<std::int64_t>(epoch), t, r->update_order, classifyDelayEvent(*r, k)};
    st.events.push_back(ev);
    if (ev.cls == DelayClass::unclassified) {
      ++st.unclassified;
      continue;
    }
    const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(t), buckets - 1);
    ++st.count_by_t[b];
    if (ev.cls == DelayClass::good) {
      ++st.good;
      ++good_by_t[b];
    } else {
      ++st.bad;
    }
  }
  const std::size_t classified = st.good + st.bad;
  st.p_hat = classified == 0 ? 0.0 : static_cast<double>(st.good) / static_cast<double>(classified);
  st.p_hat_by_t.assign(buckets, std::numeric_limits<double>::quiet_NaN());
  st.p_hat_min = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t b = 0; b < buckets; ++b) {
    if (st.count_by_t[b] == 0) continue;
    st.p_hat_by_t[b] = static_cast<double>(good_by_t[b]) / static_cast<double>(st.count_by_t[b]);
    if (st.count_by_t[b] >= minSamples) {
      st.p_hat_min = std::isnan(st.p_hat_min) ? st.p_hat_by_t[b] : std::min(st.p_hat_min, st.p_hat_by_t[b]);
    }
  }
  for (const auto& r : rounds) {
    for (const auto& w : r.workers) st.k_bar = std::max(st.k_bar, w.minor_count);
  }
  return st;
}

// Replay of the minor-view recursion
//   w_{j,t+1} = w_{j,t} -|_i delta,   w_{j,0} = xbar_j,
//   xbar_{j+1} = (1/Q) sum_q w^q_{j,K_j^q}
// from logged steps. distances[k] is ||w - snapshot|| for records[k] right
// before its own step (NaN when the snapshot was not logged).
struct MinorViewReplay {
  std::vector<std::vector<double>> xbar;  // xbar[0] = x0, xbar[j] after the j-th averaging
  std::vector<std::vector<double>> final_views;  // per worker, after the last logged step
  std::vector<double> distances;
};

inline MinorViewReplay reconstructMinorViews(std::span<const UpdateRecord> records,
                                             std::span<const AveragingRound> rounds,
                                             std::span<const double> x0, std::size_t workers) {
  const std::size_t d = x0.size();
  std::vector<std::vector<std::size_t>> by_worker(workers);
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    if (r.worker >= workers) throw ReconstructionError("record worker out of range");
    if (r.delta.empty()) {
      throw ReconstructionError("record has no logged step (full recording required)");
    }
    if (r.block_begin + r.delta.size() > d) throw ReconstructionError("record block out of range");
    by_worker[r.worker].push_back(k);
  }
  std::vector<std::vector<std::uint64_t>> stamps(workers);
  for (std::size_t q = 0; q < workers; ++q) {
    auto& idx = by_worker[q];
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return records[a].update_order < records[b].update_order; });
    for (std::size_t n = 0; n < idx.size(); ++n) {
      if (records[idx[n]].update_order != n + 1) {
        throw ReconstructionError("gap in update orders of worker " + std::to_string(q));
      }
    }
    if (!rounds.empty()) stamps[q] = detail::stampsOf(rounds, q);
  }

  MinorViewReplay out;
  out.distances.assign(records.size(), std::numeric_limits<double>::quiet_NaN());
  out.xbar.emplace_back(x0.begin(), x0.end());
  std::vector<std::size_t> cursor(workers, 0);
  std::vector<std::vector<double>> views(workers);
  for (std::size_t j = 0; j <= rounds.size(); ++j) {
    const auto& base = out.xbar.back();
    for (std::size_t q = 0; q < workers; ++q) {
      auto& w = views[q];
      w = base;
      auto& idx = by_worker[q];
      while (cursor[q] < idx.size()) {
        const auto& r = records[idx[cursor[q]]];
        if (j < rounds.size() && r.update_order >= stamps[q][j]) break;
        if (r.snapshot.size() == d) {
          double acc = 0.0;
          for (std::size_t e = 0; e < d; ++e) acc += (w[e] - r.snapshot[e]) * (w[e] - r.snapshot[e]);
          out.distances[idx[cursor[q]]] = std::sqrt(acc);
        }
        for (std::size_t e = 0; e < r.delta.size(); ++e) w[r.block_begin + e] -= r.delta[e];
        ++cursor[q];
      }
    }
    if (j == rounds.size()) break;
    std::vector<double> next(d, 0.0);
    for (std::size_t q = 0; q < workers; ++q) {
      for (std::size_t e = 0; e < d; ++e) next[e] += views[q][e];
    }
    for (double& v : next) v /= static_cast<double>(workers);
    out.xbar.push_back(std::move(next));
  }
  out.final_views = std::move(views);
  return out;
}

// Distances between minor views and the snapshots used, conditioned on the
// good delay event, against the elastic-consistency bound alpha^2 B^2 with
// B = sqrt(d) * Kbar * M.
struct ConsistencyStats {
  double alpha = 0.0;
  std::size_t good_events = 0;
  double mean_distance = 0.0;     // E[||w - v|| | good]
  double mean_distance_sq = 0.0;  // E[||w - v||^2 | good]
  std::size_t d = 0;
  std::uint64_t k_bar = 0;
  double M = 0.0;
  double B() const { return std::sqrt(static_cast<double>(d)) * static_cast<double>(k_bar) * M; }
  double bound() const { return alpha * alpha * B() * B(); }
};

inline ConsistencyStats consistencyStats(double alpha, const DelayStats& delays,
                                         std::span<const UpdateRecord> records,
                                         const MinorViewReplay& replay, std::size_t d, double M) {
  ConsistencyStats cs;
  cs.alpha = alpha;
  cs.d = d;
  cs.k_bar = delays.k_bar;
  cs.M = M;
  std::map<std::pair<std::uint32_t, std::uint64_t>, DelayClass> cls;
  for (const auto& ev : delays.events) cls[{ev.worker, ev.update_order}] = ev.cls;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t k = 0; k < records.size(); ++k) {
    const double dist = replay.distances[k];
    if (std::isnan(dist)) continue;
    const auto it = cls.find({records[k].worker, records[k].update_order});
    if (it == cls.end() || it->second != DelayClass::good) continue;
    sum += dist;
    sum_sq += dist * dist;
    ++cs.good_events;
  }
  if (cs.good_events > 0) {
    cs.mean_distance = sum / static_cast<double>(cs.good_events);
    cs.mean_distance_sq = sum_sq / static_cast<double>(cs.good_events);
  }
  return cs;
}

struct ConsistencyReport {
  bool sufficient = false;
  std::vector<ConsistencyStats> per_alpha;  // sorted by alpha
  bool monotone = false;                    // mean distance strictly increasing in alpha
  bool under_bound = false;                 // E||w - v|| <= alpha^2 B^2 at every alpha
  bool under_bound_sq = false;              // E||w - v||^2 <= alpha^2 B^2 at every alpha
  double slope = std::numeric_limits<double>::quiet_NaN();  // log-log, mean distance vs alpha
  std::string message;
};

inline ConsistencyReport elasticConsistencyCheck(std::vector<ConsistencyStats> stats,
                                                 std::size_t minGoodEvents = 100) {
  ConsistencyReport rep;
  std::sort(stats.begin(), stats.end(), [](const auto& a, const auto& b) { return a.alpha < b.alpha; });
  rep.per_alpha = stats;
  if (stats.size() < 3) {
    rep.message = "need at least three alpha values";
    return rep;
  }
  for (const auto& s : stats) {
    if (s.good_events < minGoodEvents) {
      rep.message = "insufficient good events at alpha=" + std::to_string(s.alpha);
      return rep;
    }
  }
  rep.sufficient = true;
  rep.monotone = true;
  rep.under_bound = true;
  rep.under_bound_sq = true;
  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    if (i > 0 && !(stats[i].mean_distance > stats[i - 1].mean_distance)) rep.monotone = false;
    if (!(stats[i].mean_distance <= stats[i].bound())) rep.under_bound = false;
    if (!(stats[i].mean_distance_sq <= stats[i].bound())) rep.under_bound_sq = false;
    if (stats[i].alpha > 0.0 && stats[i].mean_distance > 0.0) {
      xs.push_back(stats[i].alpha);
      ys.push_back(stats[i].mean_distance);
    }
  }
  if (xs.size() >= 2) rep.slope = stats::logLogSlope(xs, ys);
  rep.message = "ok";
  return rep;
}

// min over j >= 1 of ||grad f(xbar_j)||^2 (falls back to j = 0 when no round happened).
inline double ergodicStatistic(const Objective& obj, std::span<const std::vector<double>> xbar) {
  if (xbar.empty()) throw ValidationError("ergodicStatistic: empty sequence");
  double best = std::numeric_limits<double>::infinity();
  const std::size_t from = xbar.size() > 1 ? 1 : 0;
  for (std::size_t j = from; j < xbar.size(); ++j) {
    best = std::min(best, stats::squaredNorm(obj.fullGradient(xbar[j])));
  }
  return best;
}

struct RateReport {
  std::vector<double> budgets;
  std::vector<double> means;
  std::vector<double> stderrs;
  double slope = std::numeric_limits<double>::quiet_NaN();
  bool pass = false;
  std::string message;
};

// Log-log slope of the seed-averaged ergodic statistic against the round
// budget J; passes when slope <= threshold.
inline RateReport ergodicRateCheck(const std::map<std::uint64_t, std::vector<double>>& series,
                                   double threshold = -0.4, std::size_t minBudgets = 4,
                                   std::size_t minSeeds = 5) {
  RateReport rep;
  if (series.size() < minBudgets) throw ValidationError("ergodicRateCheck needs >= 4 budgets");
  for (const auto& [J, values] : series) {
    if (values.size() < minSeeds) throw ValidationError("ergodicRateCheck needs >= 5 seeds per budget");
    rep.budgets.push_back(static_cast<double>(J));
    rep.means.push_back(stats::mean(values));
    rep.stderrs.push_back(stats::stderror(values));
  }
  bool decreasing_somewhere = false;
  for (std::size_t i = 1; i < rep.means.size(); ++i) {
    if (rep.means[i] < rep.means[i - 1]) decreasing_somewhere = true;
  }
  rep.slope = stats::logLogSlope(rep.budgets, rep.means);
  if (!decreasing_somewhere) {
    rep.message = "statistic never decreases with J";
    rep.pass = false;
    return rep;
  }
  rep.pass = rep.slope <= threshold;
  rep.message = rep.pass ? "ok" : "slope above threshold";
  return rep;
}

struct SummabilityReport {
  double sum_p_hat = 0.0;      // sum of good indicators over (j, t, q)
  std::size_t total = 0;       // classified updates
  double first_half_rate = 0.0;
  double second_half_rate = 0.0;
  bool linear_growth = false;  // good mass keeps accruing at a rate bounded away from zero
};

inline SummabilityReport summabilityReport(const DelayStats& stats, double minRate = 0.05) {
  SummabilityReport rep;
  std::vector<const DelayEvent*> classified;
  for (const auto& ev : stats.events) {
    if (ev.cls != DelayClass::unclassified) classified.push_back(&ev);
  }
  std::sort(classified.begin(), classified.end(), [](const auto* a, const auto* b) {
    return a->update_order != b->update_order ? a->update_order < b->update_order : a->worker < b->worker;
  });
  rep.total = classified.size();
  std::size_t good_first = 0;
  std::size_t good_second = 0;
  const std::size_t half = classified.size() / 2;
  for (std::size_t i = 0; i < classified.size(); ++i) {
    if (classified[i]->cls != DelayClass::good) continue;
    rep.sum_p_hat += 1.0;
    (i < half ? good_first : good_second) += 1;
  }
  if (half > 0) rep.first_half_rate = static_cast<double>(good_first) / static_cast<double>(half);
  if (classified.size() - half > 0) {
    rep.second_half_rate = static_cast<double>(good_second) / static_cast<double>(classified.size() - half);
  }
  rep.linear_growth = rep.total > 0 && rep.first_half_rate >= minRate && rep.second_half_rate >= minRate;
  return rep;
}

}  // namespace lppsgd
