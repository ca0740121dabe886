#pragma once

// Named experiment presets, per-run analysis, and the two sweeps
// (ergodic rate over round budgets, consistency distance over step sizes).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lppsgd/config.hpp"
#include "lppsgd/engine.hpp"
#include "lppsgd/event_log.hpp"
#include "lppsgd/instrumentation.hpp"
#include "lppsgd/metrics.hpp"
#include "lppsgd/objectives.hpp"

namespace lppsgd {

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Everything the preset checks need from one (config, seed) run; the bulky
// per-update records are dropped after analysis.
struct RunAnalysis {
  Algorithm algo = Algorithm::lap_sgd;
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
  double wall_ms = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_grad_norm_sq = 0.0;
  std::optional<double> distance_to_minimizer;  // quadratic only
  std::optional<double> accuracy;               // classifiers only
  std::uint64_t total_flops = 0;
  std::uint64_t rounds = 0;
  bool budget_exact = true;  // every worker processed exactly T minibatches
  // async only
  double p_hat = 1.0;
  double p_hat_min = 1.0;
  std::uint64_t k_bar = 0;
  std::size_t classified = 0;
  std::optional<double> conservation_error;  // max |sum_q delta| over rounds, full recording
  // lpp on an mlp: 1 - partial/full backward flops, averaged over blocks and pooled
  std::optional<double> savings_by_block;
  std::optional<double> savings_pooled;
};

inline RunAnalysis analyzeRun(const ExperimentConfig& cfg, const Objective& obj, std::uint64_t seed,
                              const RunResult& res) {
  RunAnalysis a;
  a.algo = res.algo;
  a.seed = seed;
  a.rows = res.metrics;
  a.wall_ms = res.wall_ms;
  a.total_flops = res.total_flops;
  a.rounds = res.evals.empty() ? 0 : res.evals.back().round;
  const auto x = res.consensus();
  a.initial_loss = obj.fullLoss(res.initial);
  a.final_loss = obj.fullLoss(x);
  a.final_grad_norm_sq = stats::squaredNorm(obj.fullGradient(x));
  if (const auto* quad = dynamic_cast<const Quadratic*>(&obj)) {
    const auto c = quad->minimizer();
    double acc = 0.0;
    for (std::size_t e = 0; e < c.size(); ++e) acc += (x[e] - c[e]) * (x[e] - c[e]);
    a.distance_to_minimizer = std::sqrt(acc);
  } else if (const auto* lr = dynamic_cast<const LogisticRegression*>(&obj)) {
    a.accuracy = lr->accuracy(x);
  } else if (const auto* mlp = dynamic_cast<const Mlp*>(&obj)) {
    a.accuracy = mlp->accuracy(x);
  }
  for (auto m : res.minibatches) a.budget_exact = a.budget_exact && m == cfg.budget;

  if (isAsync(res.algo) && !res.records.empty()) {
    const auto delays = buildDelayStats(res.records, res.rounds);
    a.p_hat = delays.p_hat;
    a.p_hat_min = delays.p_hat_min;
    a.k_bar = delays.k_bar;
    a.classified = delays.good + delays.bad;
  }
  if (!res.rounds.empty() && !res.rounds.front().workers.front().delta.empty()) {
    double worst = 0.0;
    for (const auto& round : res.rounds) {
      const std::size_t d = round.workers.front().delta.size();
      for (std::size_t e = 0; e < d; ++e) {
        double sum = 0.0;
        for (const auto& p : round.workers) sum += p.delta[e];
        worst = std::max(worst, std::abs(sum));
      }
    }
    a.conservation_error = worst;
  }
  if (res.algo == Algorithm::lpp_sgd && obj.kind() == LossKind::mlp) {
    std::uint64_t full = 0;
    std::map<std::uint32_t, std::pair<double, std::size_t>> partial;
    for (const auto& r : res.records) {
      if (r.block == 0) {
        full = r.backward_flops;
      } else {
        auto& [sum, n] = partial[r.block];
        sum += static_cast<double>(r.backward_flops);
        ++n;
      }
    }
    if (full > 0 && !partial.empty()) {
      double by_block = 0.0;
      double pooled = 0.0;
      std::size_t pooled_n = 0;
      for (const auto& [block, sn] : partial) {
        by_block += 1.0 - sn.first / static_cast<double>(sn.second) / static_cast<double>(full);
        pooled += sn.first;
        pooled_n += sn.second;
      }
      a.savings_by_block = by_block / static_cast<double>(partial.size());
      a.savings_pooled = 1.0 - pooled / static_cast<double>(pooled_n) / static_cast<double>(full);
    }
  }
  return a;
}

struct PreparedProblem {
  std::shared_ptr<const Dataset> data;
  std::shared_ptr<const Objective> objective;
  std::vector<double> x0;
};

inline PreparedProblem prepare(const ExperimentConfig& cfg) {
  PreparedProblem p;
  p.data = std::make_shared<const Dataset>(makeDataset(cfg));
  p.objective = makeObjective(cfg, p.data);
  p.x0 = initialParams(cfg, *p.objective);
  return p;
}

// Runs every seed of `cfg`. Optionally writes per-seed metrics CSVs and the
// event log of each run into `dir`.
inline std::vector<RunAnalysis> runSeeds(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& dir,
                                         std::ostream* progress = nullptr) {
  validate(cfg);
  const auto problem = prepare(cfg);
  std::vector<RunAnalysis> out;
  for (auto seed : cfg.seeds) {
    auto res = runExperiment(toRunConfig(cfg, seed), problem.objective, problem.x0);
    if (dir) {
      std::filesystem::create_directories(*dir);
      const auto stem = toString(cfg.algo) + "_seed" + std::to_string(seed);
      writeFile((*dir / (stem + ".csv")).string(), metricsToCsv(res.metrics));
      if (cfg.event_log) {
        std::ofstream log(*dir / (stem + ".events.jsonl"));
        writeEventLog(log, res.records, res.rounds);
      }
    }
    out.push_back(analyzeRun(cfg, *problem.objective, seed, res));
    if (progress) {
      const auto& a = out.back();
      *progress << "  " << toString(cfg.algo) << " seed " << seed << ": loss " << a.final_loss << ", |grad|^2 "
                << a.final_grad_norm_sq << ", rounds " << a.rounds << ", " << a.wall_ms << " ms\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

struct RateSweepConfig {
  ExperimentConfig base;  // objective, data, Q, U; lr and budget are set per J
  std::vector<std::uint64_t> budgets{250, 500, 1000, 2000};  // J
  double c = 1.0;             // alpha = c / sqrt(J)
  std::uint64_t minibatches_per_round = 4;  // T = J * this, sync period fixed to this
};

struct RateSweepResult {
  std::map<std::uint64_t, std::vector<double>> statistic;  // J -> per-seed min_j ||grad f(xbar_j)||^2
  std::map<std::uint64_t, std::vector<double>> rounds;     // J -> realized round counts
  RateReport report;
  double wall_ms = 0.0;
};

inline ExperimentConfig rateSweepConfig(const RateSweepConfig& sweep, std::uint64_t J) {
  auto cfg = sweep.base;
  cfg.budget = J * sweep.minibatches_per_round;
  cfg.lr_kind = LrKind::multistep;
  cfg.lr = sweep.c / std::sqrt(static_cast<double>(J));
  cfg.lr_start.reset();
  cfg.warmup = 0;
  cfg.milestones.clear();
  cfg.sync_h = sweep.minibatches_per_round;
  cfg.sync_switch = 0;
  cfg.eval_interval = 0;
  return cfg;
}

inline RateSweepResult runRateSweep(const RateSweepConfig& sweep, std::ostream* progress = nullptr) {
  RateSweepResult out;
  const auto t0 = detail::Clock::now();
  for (auto J : sweep.budgets) {
    const auto cfg = rateSweepConfig(sweep, J);
    validate(cfg);
    const auto problem = prepare(cfg);
    for (auto seed : cfg.seeds) {
      const auto res = runExperiment(toRunConfig(cfg, seed), problem.objective, problem.x0);
      std::vector<std::vector<double>> xbar{res.initial};
      for (const auto& r : res.rounds) xbar.push_back(r.mean);
      out.statistic[J].push_back(ergodicStatistic(*problem.objective, xbar));
      out.rounds[J].push_back(static_cast<double>(res.rounds.size()));
      if (progress) {
        *progress << "  J=" << J << " seed " << seed << ": rounds " << res.rounds.size() << ", stat "
                  << out.statistic[J].back() << "\n";
      }
    }
  }
  out.report = ergodicRateCheck(out.statistic);
  out.wall_ms = detail::msSince(t0);
  return out;
}

struct ConsistencySweepConfig {
  ExperimentConfig base;  // full recording is forced
  std::vector<double> alphas{0.01, 0.02, 0.04};
  std::size_t moment_points = 8;
  std::size_t moment_trials = 64;
};

struct ConsistencySweepResult {
  ConsistencyReport report;
  std::vector<double> p_hat_min;  // per run
  double wall_ms = 0.0;
};

inline ConsistencySweepResult runConsistencySweep(const ConsistencySweepConfig& sweep,
                                                  std::ostream* progress = nullptr) {
  ConsistencySweepResult out;
  const auto t0 = detail::Clock::now();
  std::vector<ConsistencyStats> all;
  for (double alpha : sweep.alphas) {
    auto cfg = sweep.base;
    cfg.full_record = true;
    cfg.lr_kind = LrKind::multistep;
    cfg.lr = alpha;
    cfg.lr_start.reset();
    cfg.warmup = 0;
    cfg.milestones.clear();
    validate(cfg);
    const auto problem = prepare(cfg);
    // pooled over seeds: events, distances and the M estimate
    ConsistencyStats pooled;
    pooled.alpha = alpha;
    pooled.d = problem.objective->dim();
    double sum = 0.0;
    double sum_sq = 0.0;
    for (auto seed : cfg.seeds) {
      const auto rc = toRunConfig(cfg, seed);
      const auto res = runExperiment(rc, problem.objective, problem.x0);
      const auto delays = buildDelayStats(res.records, res.rounds);
      out.p_hat_min.push_back(delays.p_hat_min);
      const auto replay = reconstructMinorViews(res.records, res.rounds, res.initial, cfg.workers);
      std::vector<std::vector<double>> points{res.initial};
      const std::size_t step = std::max<std::size_t>(1, res.records.size() / sweep.moment_points);
      for (std::size_t k = 0; k < res.records.size(); k += step) points.push_back(res.records[k].snapshot);
      const auto mb = estimateMomentBounds(*problem.objective, points, sweep.moment_trials, cfg.batch, {}, seed);
      const auto cs = consistencyStats(alpha, delays, res.records, replay, pooled.d, mb.M());
      sum += cs.mean_distance * static_cast<double>(cs.good_events);
      sum_sq += cs.mean_distance_sq * static_cast<double>(cs.good_events);
      pooled.good_events += cs.good_events;
      pooled.k_bar = std::max(pooled.k_bar, cs.k_bar);
      pooled.M = std::max(pooled.M, cs.M);
      if (progress) {
        *progress << "  alpha=" << alpha << " seed " << seed << ": good " << cs.good_events << ", E|w-v| "
                  << cs.mean_distance << ", K " << cs.k_bar << ", M " << cs.M << "\n";
      }
    }
    if (pooled.good_events > 0) {
      pooled.mean_distance = sum / static_cast<double>(pooled.good_events);
      pooled.mean_distance_sq = sum_sq / static_cast<double>(pooled.good_events);
    }
    all.push_back(pooled);
  }
  out.report = elasticConsistencyCheck(all);
  out.wall_ms = detail::msSince(t0);
  return out;
}

// ---------------------------------------------------------------------------
// Presets

namespace preset_detail {

inline ExperimentConfig quadraticBase() {
  ExperimentConfig c;
  c.objective = LossKind::quadratic;
  c.data = DataSource::quadratic_centers;
  c.samples = 256;
  c.features = 64;
  c.noise = 0.001;
  c.center_scale = 1.0;
  c.batch = 16;
  c.budget = 20000;
  c.lr = 0.2;
  c.lr_start = 0.02;
  c.warmup = c.budget / 60;
  c.eval_interval = 1000;
  c.seeds = {1, 2, 3};
  return c;
}

inline ExperimentConfig logregBase() {
  ExperimentConfig c;
  c.objective = LossKind::logistic_regression;
  c.data = DataSource::gaussian_blobs;
  c.samples = 200;
  c.features = 8;
  c.classes = 2;
  c.separation = 6.0;
  c.spread = 0.5;
  c.batch = 16;
  c.budget = 4000;
  c.lr = 0.5;
  c.lr_start = 0.05;
  c.warmup = c.budget / 60;
  c.eval_interval = 250;
  c.seeds = {1, 2, 3};
  return c;
}

inline ExperimentConfig mlp2Base() {
  ExperimentConfig c;
  c.objective = LossKind::mlp;
  c.data = DataSource::gaussian_blobs;
  c.samples = 300;
  c.features = 4;
  c.classes = 3;
  c.separation = 3.0;
  c.spread = 1.0;
  c.widths = {4, 16, 3};
  c.init_seed = 7;
  c.batch = 16;
  c.budget = 6000;
  c.lr = 0.2;
  c.lr_start = 0.02;
  c.warmup = c.budget / 60;
  c.eval_interval = 500;
  c.seeds = {1, 2, 3};
  return c;
}

inline ExperimentConfig mlp4Base() {
  ExperimentConfig c;
  c.objective = LossKind::mlp;
  c.data = DataSource::gaussian_blobs;
  c.samples = 512;
  c.features = 8;
  c.classes = 8;
  c.separation = 4.0;
  c.spread = 1.0;
  c.widths = {8, 8, 8, 8, 8};
  c.init_seed = 11;
  c.batch = 16;
  c.budget = 4000;
  c.lr = 0.2;
  c.lr_start = 0.02;
  c.warmup = c.budget / 60;
  c.eval_interval = 500;
  c.seeds = {1, 2, 3};
  return c;
}

// The synchronous baselines use multistep decay at 50% / 75%; the local
// asynchronous ones cosine annealing.
inline ExperimentConfig withAlgo(ExperimentConfig c, Algorithm a) {
  c.algo = a;
  c.name = toString(a);
  if (isAsync(a)) {
    c.lr_kind = LrKind::cosine;
    c.milestones.clear();
  } else {
    c.lr_kind = LrKind::multistep;
    c.milestones = {c.budget / 2, c.budget * 3 / 4};
    c.gamma = 0.1;
  }
  return c;
}

inline std::vector<ExperimentConfig> allFour(const ExperimentConfig& base) {
  return {withAlgo(base, Algorithm::mb_sgd), withAlgo(base, Algorithm::pl_sgd), withAlgo(base, Algorithm::lap_sgd),
          withAlgo(base, Algorithm::lpp_sgd)};
}

}  // namespace preset_detail

inline const std::vector<std::string>& presetNames() {
  static const std::vector<std::string> names = {"quadratic-smoke", "logreg-blobs", "mlp-2layer",
                                                 "mlp-4layer",      "rate-sweep",   "consistency-sweep"};
  return names;
}

inline bool isSweepPreset(const std::string& name) { return name == "rate-sweep" || name == "consistency-sweep"; }

// Configs of a run-style preset (one per algorithm). Throws ConfigError for unknown names.
inline std::vector<ExperimentConfig> presetConfigs(const std::string& name) {
  using namespace preset_detail;
  std::vector<ExperimentConfig> out;
  if (name == "quadratic-smoke") {
    out = allFour(quadraticBase());
  } else if (name == "logreg-blobs") {
    out = allFour(logregBase());
  } else if (name == "mlp-2layer") {
    // layer-aligned blocks: at most one partition per layer
    out = allFour(mlp2Base());
    for (auto& c : out) {
      if (isAsync(c.algo)) c.updaters = 2;
    }
  } else if (name == "mlp-4layer") {
    out = {withAlgo(mlp4Base(), Algorithm::lap_sgd), withAlgo(mlp4Base(), Algorithm::lpp_sgd)};
  } else {
    throw ConfigError("preset", "unknown preset '" + name + "'");
  }
  for (auto& c : out) c.name = name;
  return out;
}

inline RateSweepConfig rateSweepPreset() {
  RateSweepConfig s;
  s.base = preset_detail::withAlgo(preset_detail::mlp2Base(), Algorithm::lap_sgd);
  s.base.name = "rate-sweep";
  s.base.workers = 2;
  s.base.updaters = 4;
  s.base.seeds = {1, 2, 3, 4, 5};
  s.c = 2.0;
  s.minibatches_per_round = 4;
  return s;
}

inline ConsistencySweepConfig consistencySweepPreset() {
  ConsistencySweepConfig s;
  auto c = preset_detail::withAlgo(preset_detail::quadraticBase(), Algorithm::lap_sgd);
  c.name = "consistency-sweep";
  c.noise = 1.0;
  c.samples = 512;
  c.batch = 8;
  c.budget = 2000;
  c.warmup = 0;
  c.lr_start.reset();
  c.sync_h = 8;
  c.sync_switch = 0;
  c.eval_interval = 0;
  c.seeds = {1, 2, 3};
  s.base = c;
  return s;
}

struct PresetReport {
  std::string name;
  std::vector<MetricsRow> rows;
  std::vector<RunAnalysis> runs;
  std::vector<Check> checks;
  std::optional<RateSweepResult> rate;
  std::optional<ConsistencySweepResult> consistency;

  bool ok() const {
    for (const auto& c : checks) {
      if (!c.pass) return false;
    }
    return true;
  }
};

namespace preset_detail {

inline std::string fmt(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

// Checks every run of a run-style preset must satisfy.
inline void standardChecks(const std::string& name, PresetReport& rep) {
  for (const auto& a : rep.runs) {
    const std::string tag = toString(a.algo) + " seed " + std::to_string(a.seed);
    rep.checks.push_back({tag + " budget", a.budget_exact, "every worker processed exactly T minibatches"});
    if (isAsync(a.algo)) {
      const bool ok = !std::isnan(a.p_hat_min) && a.p_hat_min > 0.05;
      rep.checks.push_back({tag + " good-event rate", ok,
                            "min p_hat " + fmt(a.p_hat_min) + " (overall " + fmt(a.p_hat) + ")"});
    }
    if (name == "quadratic-smoke") {
      rep.checks.push_back({tag + " converged", *a.distance_to_minimizer < 1e-3 && a.final_loss - 0.0 < 1e-4,
                            "|x-c| " + fmt(*a.distance_to_minimizer) + ", loss " + fmt(a.final_loss)});
    } else if (name == "logreg-blobs") {
      rep.checks.push_back({tag + " accuracy", *a.accuracy == 1.0, "train accuracy " + fmt(*a.accuracy)});
    } else {
      rep.checks.push_back({tag + " loss decreased", a.final_loss < 0.5 * a.initial_loss,
                            "loss " + fmt(a.initial_loss) + " -> " + fmt(a.final_loss)});
    }
  }
  if (name == "mlp-4layer") {
    std::map<std::uint64_t, std::uint64_t> lap;
    for (const auto& a : rep.runs) {
      if (a.algo == Algorithm::lap_sgd) lap[a.seed] = a.total_flops;
    }
    for (const auto& a : rep.runs) {
      if (a.algo != Algorithm::lpp_sgd) continue;
      const std::string tag = "lpp_sgd seed " + std::to_string(a.seed);
      const bool have = a.savings_by_block.has_value();
      rep.checks.push_back({tag + " backward savings", have && std::abs(*a.savings_by_block - 0.375) <= 0.02,
                            have ? "measured " + fmt(*a.savings_by_block) + " (pooled " + fmt(*a.savings_pooled) + ")"
                                 : "no partial updates"});
      if (lap.count(a.seed)) {
        rep.checks.push_back({tag + " flops below lap", a.total_flops < lap[a.seed],
                              fmt(static_cast<double>(a.total_flops)) + " vs " +
                                  fmt(static_cast<double>(lap[a.seed]))});
      }
    }
  }
}

}  // namespace preset_detail

using Overrides = std::vector<std::pair<std::string, std::string>>;

inline void applyOverrides(ExperimentConfig& c, const Overrides& overrides) {
  for (const auto& [k, v] : overrides) applyOverride(c, k, v);
  validate(c);
}

// Runs a preset; per-seed CSVs, the combined metrics and the summary go to
// `out/<name>/` when `out` is set.
inline PresetReport runPreset(const std::string& name, const Overrides& overrides,
                              const std::optional<std::filesystem::path>& out, std::ostream* progress = nullptr) {
  PresetReport rep;
  rep.name = name;
  const auto dir = out ? std::optional<std::filesystem::path>(*out / name) : std::nullopt;
  if (name == "rate-sweep") {
    auto sweep = rateSweepPreset();
    applyOverrides(sweep.base, overrides);
    rep.rate = runRateSweep(sweep, progress);
    const auto& r = rep.rate->report;
    rep.checks.push_back({"ergodic rate slope", r.pass, "slope " + preset_detail::fmt(r.slope) + " (" + r.message + ")"});
    if (dir) {
      std::filesystem::create_directories(*dir);
      std::string csv = "J,seed_index,rounds,statistic\n";
      for (const auto& [J, xs] : rep.rate->statistic) {
        for (std::size_t i = 0; i < xs.size(); ++i) {
          csv += std::to_string(J) + ',' + std::to_string(i) + ',' + formatDouble(rep.rate->rounds[J][i]) + ',' +
                 formatDouble(xs[i]) + '\n';
        }
      }
      writeFile((*dir / "rate.csv").string(), csv);
    }
    return rep;
  }
  if (name == "consistency-sweep") {
    auto sweep = consistencySweepPreset();
    applyOverrides(sweep.base, overrides);
    rep.consistency = runConsistencySweep(sweep, progress);
    const auto& r = rep.consistency->report;
    rep.checks.push_back({"sufficient good events", r.sufficient, r.message});
    rep.checks.push_back({"monotone in alpha", r.monotone, "slope " + preset_detail::fmt(r.slope)});
    rep.checks.push_back({"under alpha^2 B^2", r.under_bound, "E|w-v|"});
    rep.checks.push_back({"under alpha^2 B^2 (squared)", r.under_bound_sq, "E|w-v|^2"});
    for (double p : rep.consistency->p_hat_min) {
      rep.checks.push_back({"good-event rate", !std::isnan(p) && p > 0.05, "min p_hat " + preset_detail::fmt(p)});
    }
    if (dir) {
      std::filesystem::create_directories(*dir);
      std::string csv = "alpha,good_events,mean_distance,mean_distance_sq,k_bar,M,bound\n";
      for (const auto& s : r.per_alpha) {
        csv += formatDouble(s.alpha) + ',' + std::to_string(s.good_events) + ',' + formatDouble(s.mean_distance) +
               ',' + formatDouble(s.mean_distance_sq) + ',' + std::to_string(s.k_bar) + ',' + formatDouble(s.M) +
               ',' + formatDouble(s.bound()) + '\n';
      }
      writeFile((*dir / "consistency.csv").string(), csv);
    }
    return rep;
  }
  for (auto cfg : presetConfigs(name)) {
    applyOverrides(cfg, overrides);
    if (progress) *progress << name << ": " << toString(cfg.algo) << "\n";
    for (auto& a : runSeeds(cfg, dir, progress)) {
      rep.rows.insert(rep.rows.end(), a.rows.begin(), a.rows.end());
      rep.runs.push_back(std::move(a));
    }
  }
  preset_detail::standardChecks(name, rep);
  if (dir) {
    writeFile((*dir / "metrics.csv").string(), metricsToCsv(rep.rows));
    writeFile((*dir / "summary.csv").string(), summaryToCsv(summarize(rep.rows)));
  }
  return rep;
}

}  // namespace lppsgd
