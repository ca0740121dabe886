// lppsgd: run presets or config files, generate datasets, print configs.
//
// exit status: 0 ok, 1 a run check failed, 2 usage or configuration error

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lppsgd/config.hpp"
#include "lppsgd/dataset.hpp"
#include "lppsgd/metrics.hpp"
#include "lppsgd/presets.hpp"

namespace {

using namespace lppsgd;

struct Flags {
  std::optional<std::string> algo, workers, updaters, batch, budget, lr, sync_h, tst, seed, out;

  void add(CLI::App* app) {
    app->add_option("--algo", algo, "mb_sgd | pl_sgd | lap_sgd | lpp_sgd");
    app->add_option("--workers", workers, "number of workers Q");
    app->add_option("--updaters", updaters, "updater threads per worker U");
    app->add_option("--batch", batch, "local minibatch size");
    app->add_option("--budget", budget, "minibatches per worker T");
    app->add_option("--lr", lr, "peak learning rate");
    app->add_option("--sync-h", sync_h, "averaging period H after the switch point");
    app->add_option("--tst", tst, "warm-start budget T_st");
    app->add_option("--seed", seed, "single seed (replaces the seed list)");
    app->add_option("--out", out, "output directory");
  }

  Overrides overrides() const {
    Overrides o;
    auto put = [&](const char* key, const std::optional<std::string>& v) {
      if (v) o.emplace_back(key, *v);
    };
    put("run.algo", algo);
    put("run.workers", workers);
    put("run.updaters", updaters);
    put("run.batch", batch);
    put("run.budget", budget);
    put("lr.lr", lr);
    put("sync.h", sync_h);
    put("run.tst", tst);
    put("run.seeds", seed);
    return o;
  }
};

void printChecks(const PresetReport& rep) {
  for (const auto& c : rep.checks) {
    std::cout << (c.pass ? "ok    " : "FAIL  ") << c.name << ": " << c.detail << "\n";
  }
}

void printSummary(const std::vector<MetricsRow>& rows) {
  std::cout << "algo        metric          mean            std\n";
  for (const auto& s : summarize(rows)) {
    if (s.metric != "train_loss" && s.metric != "grad_norm_sq" && s.metric != "wall_ms") continue;
    std::cout << s.algo << std::string(12 - std::min<std::size_t>(11, s.algo.size()), ' ') << s.metric
              << std::string(16 - std::min<std::size_t>(15, s.metric.size()), ' ') << s.mean << "  +- " << s.std
              << "\n";
  }
}

int runCommand(const std::optional<std::string>& preset, const std::optional<std::string>& configPath,
               const Flags& flags, bool quiet) {
  std::ostream* progress = quiet ? nullptr : &std::cout;
  const std::filesystem::path out = flags.out.value_or("out");
  PresetReport rep;
  if (configPath) {
    auto cfg = parseConfig(readFile(*configPath));
    applyOverrides(cfg, flags.overrides());
    if (flags.out) cfg.out = *flags.out;
    rep.name = cfg.name;
    const std::filesystem::path dir = std::filesystem::path(cfg.out) / cfg.name;
    for (auto& a : runSeeds(cfg, dir, progress)) {
      rep.rows.insert(rep.rows.end(), a.rows.begin(), a.rows.end());
      rep.runs.push_back(std::move(a));
    }
    preset_detail::standardChecks(cfg.name, rep);
    writeFile((dir / "metrics.csv").string(), metricsToCsv(rep.rows));
    writeFile((dir / "summary.csv").string(), summaryToCsv(summarize(rep.rows)));
    writeFile((dir / "config.ini").string(), serializeConfig(cfg));
  } else {
    rep = runPreset(*preset, flags.overrides(), out, progress);
  }
  if (!rep.rows.empty()) printSummary(rep.rows);
  if (rep.rate) {
    const auto& r = rep.rate->report;
    for (std::size_t i = 0; i < r.budgets.size(); ++i) {
      std::cout << "J=" << r.budgets[i] << "  min|grad|^2 " << r.means[i] << " +- " << r.stderrs[i] << "\n";
    }
  }
  if (rep.consistency) {
    for (const auto& s : rep.consistency->report.per_alpha) {
      std::cout << "alpha=" << s.alpha << "  E|w-v| " << s.mean_distance << "  E|w-v|^2 " << s.mean_distance_sq
                << "  bound " << s.bound() << "  good " << s.good_events << "\n";
    }
  }
  printChecks(rep);
  return rep.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Locally-asynchronous partial-backprop SGD experiments"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run a preset or a config file");
  std::optional<std::string> preset;
  std::optional<std::string> configPath;
  bool quiet = false;
  Flags flags;
  run->add_option("preset", preset, "preset name (see `lppsgd list`)");
  run->add_option("--config", configPath, "config file")->check(CLI::ExistingFile);
  run->add_flag("--quiet", quiet, "only print the summary and checks");
  flags.add(run);

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset as CSV (features..., label)");
  std::string kind = "gaussian-blobs";
  std::size_t samples = 200, features = 2, classes = 2;
  double separation = 4.0, spread = 1.0, noise = 0.1;
  std::uint64_t dataSeed = 1;
  std::string dataOut;
  gen->add_option("--kind", kind, "gaussian-blobs | linear-regression")->check(
      CLI::IsMember({"gaussian-blobs", "linear-regression"}));
  gen->add_option("--samples", samples);
  gen->add_option("--features", features);
  gen->add_option("--classes", classes);
  gen->add_option("--separation", separation);
  gen->add_option("--spread", spread);
  gen->add_option("--noise", noise);
  gen->add_option("--seed", dataSeed);
  gen->add_option("--out", dataOut, "output CSV path")->required();

  auto* config = app.add_subcommand("config", "print a preset's configs, or validate a config file");
  std::optional<std::string> configPreset;
  std::optional<std::string> checkPath;
  config->add_option("preset", configPreset);
  config->add_option("--check", checkPath, "validate and re-serialize a config file")->check(CLI::ExistingFile);

  auto* list = app.add_subcommand("list", "list presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*list) {
      for (const auto& n : presetNames()) std::cout << n << "\n";
      return 0;
    }
    if (*gen) {
      Dataset ds = kind == "gaussian-blobs" ? gaussianBlobs(samples, features, classes, separation, spread, dataSeed)
                                            : linearRegression(samples, features, noise, dataSeed);
      saveCsv(ds, dataOut);
      return 0;
    }
    if (*config) {
      if (checkPath) {
        std::cout << serializeConfig(parseConfig(readFile(*checkPath)));
        return 0;
      }
      if (!configPreset) {
        std::cerr << "config: give a preset name or --check FILE\n";
        return 2;
      }
      if (*configPreset == "rate-sweep") {
        std::cout << serializeConfig(rateSweepPreset().base);
      } else if (*configPreset == "consistency-sweep") {
        std::cout << serializeConfig(consistencySweepPreset().base);
      } else {
        bool first = true;
        for (const auto& c : presetConfigs(*configPreset)) {
          if (!first) std::cout << "\n# ---\n\n";
          first = false;
          std::cout << serializeConfig(c);
        }
      }
      return 0;
    }
    if (*run) {
      if (preset.has_value() == configPath.has_value()) {
        std::cerr << "run: give exactly one of a preset name or --config FILE\n";
        return 2;
      }
      return runCommand(preset, configPath, flags, quiet);
    }
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
