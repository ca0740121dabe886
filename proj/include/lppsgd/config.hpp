#pragma once

// Experiment configuration and its text format.
//
//   # comment
//   [run]
//   algo = "lap_sgd"
//   workers = 2
//   seeds = "1,2,3"
//
// Strings (and lists) are double-quoted; integers, reals and bools are bare.
// Unknown sections or keys are errors. Every key has one entry in fields(),
// which drives parsing, serialization and command-line overrides alike.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lppsgd/dataset.hpp"
#include "lppsgd/engine.hpp"
#include "lppsgd/errors.hpp"
#include "lppsgd/objectives.hpp"
#include "lppsgd/schedules.hpp"

namespace lppsgd {

enum class DataSource { quadratic_centers, gaussian_blobs, linear_regression, csv };

inline std::string toString(DataSource s) {
  switch (s) {
    case DataSource::quadratic_centers: return "quadratic-centers";
    case DataSource::gaussian_blobs: return "gaussian-blobs";
    case DataSource::linear_regression: return "linear-regression";
    case DataSource::csv: return "csv";
  }
  return "?";
}

struct ExperimentConfig {
  // [run]
  std::string name = "experiment";
  Algorithm algo = Algorithm::lap_sgd;
  std::size_t workers = 2;
  std::optional<std::size_t> updaters;  // defaults to 4 for lap/lpp, 1 for mb/pl
  std::size_t batch = 16;
  std::uint64_t budget = 10000;
  std::optional<std::uint64_t> warm_start;  // T_st; defaults to budget / 10
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::uint64_t eval_interval = 0;
  SamplingMode sampling = SamplingMode::iid;
  bool full_record = false;
  std::size_t provenance_sample = 32;

  // [lr]
  LrKind lr_kind = LrKind::cosine;
  double lr = 0.1;                     // peak
  std::optional<double> lr_start;      // warm-up start; defaults to lr
  std::uint64_t warmup = 0;
  std::vector<std::uint64_t> milestones;
  double gamma = 0.1;
  double lpp_multiplier = 1.0;  // lpp_sgd warms up to this multiple of lr

  // [sync]
  std::uint64_t sync_h = 16;
  std::optional<std::uint64_t> sync_switch;  // defaults to budget / 2

  // [objective]
  LossKind objective = LossKind::quadratic;
  std::vector<std::size_t> widths;  // mlp only, input first
  std::uint64_t init_seed = 0;

  // [data]
  DataSource data = DataSource::quadratic_centers;
  std::size_t samples = 256;
  std::size_t features = 64;
  std::size_t classes = 2;
  double separation = 4.0;
  double spread = 1.0;
  double noise = 0.001;
  double center_scale = 1.0;
  std::uint64_t data_seed = 1;
  std::string data_path;

  // [output]
  std::string out = "out";
  bool event_log = false;

  std::size_t updaterCount() const { return updaters.value_or(isAsync(algo) ? 4 : 1); }
  std::uint64_t warmStart() const { return warm_start.value_or(budget / 10); }
  std::uint64_t syncSwitch() const { return sync_switch.value_or(budget / 2); }

  bool operator==(const ExperimentConfig&) const = default;
};

namespace config_detail {

struct Field {
  std::string section;
  std::string key;
  bool quoted;  // string-valued in the file format
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::optional<std::string>(const ExperimentConfig&)> get;
};

// Raw scalar conversions. Failures are reported as ConfigError by the caller.
inline std::uint64_t toUint(const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || v.empty()) {
    throw ValidationError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline double toReal(const std::string& v) { return parseDouble(v); }

inline bool toBool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ValidationError("expected true or false, got '" + v + "'");
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Drops a trailing "# ..." or "; ..." comment that starts outside quotes
// after whitespace.
inline std::string stripComment(std::string_view s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (!quoted && (s[i] == '#' || s[i] == ';') && i > 0 && (s[i - 1] == ' ' || s[i - 1] == '\t')) {
      return trim(s.substr(0, i));
    }
  }
  return std::string(s);
}

template <class T>
std::vector<T> toList(const std::string& v) {
  std::vector<T> out;
  if (trim(v).empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = v.find(',', pos);
    const auto item = trim(std::string_view(v).substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    out.push_back(static_cast<T>(toUint(item)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

template <class T>
std::string fromList(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

inline std::string str(std::uint64_t v) { return std::to_string(v); }
inline std::string str(double v) { return formatDouble(v); }
inline std::string str(bool v) { return v ? "true" : "false"; }

inline LrKind toLrKind(const std::string& v) {
  if (v == "cosine") return LrKind::cosine;
  if (v == "multistep") return LrKind::multistep;
  throw ValidationError("expected cosine or multistep");
}

inline LossKind toLossKind(const std::string& v) {
  if (v == "quadratic") return LossKind::quadratic;
  if (v == "logistic_regression" || v == "logreg") return LossKind::logistic_regression;
  if (v == "mlp") return LossKind::mlp;
  throw ValidationError("unknown objective '" + v + "'");
}

inline SamplingMode toSampling(const std::string& v) {
  if (v == "iid") return SamplingMode::iid;
  if (v == "epoch") return SamplingMode::epoch;
  if (v == "full") return SamplingMode::full;
  throw ValidationError("unknown sampling mode '" + v + "'");
}

inline DataSource toDataSource(const std::string& v) {
  if (v == "quadratic-centers") return DataSource::quadratic_centers;
  if (v == "gaussian-blobs") return DataSource::gaussian_blobs;
  if (v == "linear-regression") return DataSource::linear_regression;
  if (v == "csv") return DataSource::csv;
  throw ValidationError("unknown data source '" + v + "'");
}

#define LPPSGD_UINT(sec, k, member)                                                                   \
  Field{sec, k, false, [](ExperimentConfig& c, const std::string& v) { c.member = toUint(v); },      \
        [](const ExperimentConfig& c) -> std::optional<std::string> { return str(std::uint64_t(c.member)); }}
#define LPPSGD_REAL(sec, k, member)                                                                   \
  Field{sec, k, false, [](ExperimentConfig& c, const std::string& v) { c.member = toReal(v); },      \
        [](const ExperimentConfig& c) -> std::optional<std::string> { return str(c.member); }}
#define LPPSGD_BOOL(sec, k, member)                                                                   \
  Field{sec, k, false, [](ExperimentConfig& c, const std::string& v) { c.member = toBool(v); },      \
        [](const ExperimentConfig& c) -> std::optional<std::string> { return str(c.member); }}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"run", "name", true, [](ExperimentConfig& c, const std::string& v) { c.name = v; },
            [](const ExperimentConfig& c) -> std::optional<std::string> { return c.name; }},
      Field{"run", "algo", true,
            [](ExperimentConfig& c, const std::string& v) {
              const auto a = parseAlgorithm(v);
              if (!a) throw ValidationError("unknown algorithm '" + v + "'");
              c.algo = *a;
            },
            [](const ExperimentConfig& c) -> std::optional<std::string> { return toString(c.algo); }},
      LPPSGD_UINT("run", "workers", workers),
      Field{"run", "updaters", false, [](ExperimentConfig& c, const std::string& v) { c.updaters = toUint(v); },
            [](const ExperimentConfig& c) -> std::optional<std::string> {
              if (!c.updaters) return std::nullopt;
              return str(std::uint64_t(*c.updaters));
            }},
      LPPSGD_UINT("run", "batch", batch),
      LPPSGD_UINT("run", "budget", budget),
      Field{"run", "tst", false, [](ExperimentConfig& c, const std::string& v) { c.warm_start = toUint(v); },
            [](const ExperimentConfig& c) -> std::optional<std::string> {
              if (!c.warm_start) return std::nullopt;
              return str(*c.warm_start);
            }},
      Field{"run", "seeds", true,
            [](ExperimentConfig& c, const std::string& v) {
              c.seeds = toList<std::uint64_t>(v);
              if (c.seeds.empty()) throw ValidationError("seed list is empty");
            },
            [](const ExperimentConfig& c) -> std::optional<std::string> { return fromList(c.seeds); }},
      LPPSGD_UINT("run", "eval_interval", eval_interval),
      Field{"run", "sampling", true, [](ExperimentConfig& c, const std::string& v) { c.sampling = toSampling(v); },
            [](const ExperimentConfig& c) -> std::optional<std::string> { return toString(c.sampling); }},
      LPPSGD_BOOL("run", "full_record", full_record),
      LPPSGD_UINT("run", "provenance_sample", provenance_sample),

      Field{"lr", "kind", true, [](ExperimentConfig& c, const std::string& v) { c.lr_kind = toLrKind(v); },
            [](const ExperimentConfig& c) -> std::optional<std::string> {
              return c.lr_kind == LrKind::cosine ? "cosine" : "multistep";
            }},
      LPPSGD_REAL("lr", "lr", lr),
      Field{"lr", "start", false, [](ExperimentConfig& c, const std::string& v) { c.lr_start = toReal(v); },
            [](const ExperimentConfig& c) -> std::optional<std::string> {
              if (!c.lr_start) return std::nullopt;
              return str(*c.lr_start);
            }},
      LPPSGD_UINT("lr", "warmup", warmup),
      Field{"lr", "milestones", true,
            [](ExperimentConfig& c, const std::string& v) { c.milestones = toList<std::uint64_t>(v); },
            [](const ExperimentConfig& c) -> std::optional<std::string> { return fromList(c.milestones); }},
      LPPSGD_REAL("lr", "gamma", gamma),
      LPPSGD_REAL("lr", "lpp_multiplier", lpp_multiplier),

      LPPSGD_UINT("sync", "h", sync_h),
      Field{"sync", "switch", false, [](ExperimentConfig& c, const std::string& v) { c.sync_switch = toUint(v); },
            [](const ExperimentConfig& c) -> std::optional<std::string> {
              if (!c.sync_switch) return std::nullopt;
              return str(*c.sync_switch);
            }},

      Field{"objective", "kind", true,
            [](ExperimentConfig& c, const std::string& v) { c.objective = toLossKind(v); },
            [](const ExperimentConfig& c) -> std::optional<std::string> { return toString(c.objective); }},
      Field{"objective", "widths", true,
            [](ExperimentConfig& c, const std::string& v) { c.widths = toList<std::size_t>(v); },
            [](const ExperimentConfig& c) -> std::optional<std::string> { return fromList(c.widths); }},
      LPPSGD_UINT("objective", "init_seed", init_seed),

      Field{"data", "source", true, [](ExperimentConfig& c, const std::string& v) { c.data = toDataSource(v); },
            [](const ExperimentConfig& c) -> std::optional<std::string> { return toString(c.data); }},
      LPPSGD_UINT("data", "samples", samples),
      LPPSGD_UINT("data", "features", features),
      LPPSGD_UINT("data", "classes", classes),
      LPPSGD_REAL("data", "separation", separation),
      LPPSGD_REAL("data", "spread", spread),
      LPPSGD_REAL("data", "noise", noise),
      LPPSGD_REAL("data", "center_scale", center_scale),
      LPPSGD_UINT("data", "seed", data_seed),
      Field{"data", "path", true, [](ExperimentConfig& c, const std::string& v) { c.data_path = v; },
            [](const ExperimentConfig& c) -> std::optional<std::string> { return c.data_path; }},

      Field{"output", "dir", true, [](ExperimentConfig& c, const std::string& v) { c.out = v; },
            [](const ExperimentConfig& c) -> std::optional<std::string> { return c.out; }},
      LPPSGD_BOOL("output", "event_log", event_log),
  };
  return table;
}

#undef LPPSGD_UINT
#undef LPPSGD_REAL
#undef LPPSGD_BOOL

inline const Field* findField(std::string_view section, std::string_view key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) return &f;
  }
  return nullptr;
}

inline std::string qualified(const Field& f) { return f.section + "." + f.key; }

}  // namespace config_detail

// Learning-rate schedule implied by the config.
inline LrSchedule lrSchedule(const ExperimentConfig& c) {
  LrSchedule s;
  s.kind = c.lr_kind;
  s.peak = c.algo == Algorithm::lpp_sgd ? c.lr * c.lpp_multiplier : c.lr;
  s.alpha0 = c.lr_start.value_or(c.lr);
  s.warmup = c.warmup;
  s.total = c.budget;
  s.milestones = c.milestones;
  s.gamma = c.gamma;
  return s;
}

// RunConfig for one seed.
inline RunConfig toRunConfig(const ExperimentConfig& c, std::uint64_t seed) {
  RunConfig r;
  r.algo = c.algo;
  r.workers = c.workers;
  r.updaters = c.updaterCount();
  r.batch = c.batch;
  r.budget = c.budget;
  r.lr = lrSchedule(c);
  r.sync = SyncScheme{c.budget, c.sync_h, c.syncSwitch()};
  r.warm_start = c.warmStart();
  r.seed = seed;
  r.eval_interval = c.eval_interval;
  r.sampling = c.sampling;
  r.record = c.full_record ? RecordLevel::full : RecordLevel::summary;
  r.provenance_sample = c.provenance_sample;
  return r;
}

// Throws ConfigError naming the offending key.
inline void validate(const ExperimentConfig& c) {
  if (c.seeds.empty()) throw ConfigError("run.seeds", "seed list is empty");
  if (c.budget == 0) throw ConfigError("run.budget", "must be >= 1");
  if (c.lr_start && *c.lr_start > c.lr) throw ConfigError("lr.start", "must not exceed lr.lr");
  if (!(c.lpp_multiplier >= 1.0)) throw ConfigError("lr.lpp_multiplier", "must be >= 1");
  if (c.warmup > c.budget) throw ConfigError("lr.warmup", "must be <= run.budget");
  if (c.sync_switch && *c.sync_switch > c.budget) throw ConfigError("sync.switch", "must be <= run.budget");
  if (c.sync_h == 0) throw ConfigError("sync.h", "must be >= 1");
  if (c.samples == 0 && c.data != DataSource::csv) throw ConfigError("data.samples", "must be >= 1");
  if (c.features == 0) throw ConfigError("data.features", "must be >= 1");
  if (c.data == DataSource::csv && c.data_path.empty()) throw ConfigError("data.path", "required for csv data");
  if (c.objective == LossKind::mlp) {
    if (c.widths.size() < 2) throw ConfigError("objective.widths", "mlp needs at least two widths");
    if (c.widths.front() != c.features && c.data != DataSource::csv) {
      throw ConfigError("objective.widths", "first width must equal data.features");
    }
    if (c.data == DataSource::gaussian_blobs && c.widths.back() != c.classes) {
      throw ConfigError("objective.widths", "last width must equal data.classes");
    }
  }
  if (c.objective == LossKind::logistic_regression && c.data == DataSource::gaussian_blobs && c.classes != 2) {
    throw ConfigError("data.classes", "logistic regression needs two classes");
  }
  try {
    toRunConfig(c, c.seeds.front()).validate();
  } catch (const ConfigError& e) {
    const std::string key = e.key() == "sync_h" ? "sync.h" : e.key() == "lr" ? "lr.lr" : "run." + e.key();
    throw ConfigError(key, e.what());
  }
}

// Sets one key from an unquoted value. `key` is "section.key" or a bare key
// when it is unambiguous.
inline void applyOverride(ExperimentConfig& c, const std::string& key, const std::string& value) {
  using namespace config_detail;
  const Field* field = nullptr;
  const auto dot = key.find('.');
  if (dot != std::string::npos) {
    field = findField(key.substr(0, dot), key.substr(dot + 1));
  } else {
    for (const auto& f : fields()) {
      if (f.key != key) continue;
      if (field) throw ConfigError(key, "ambiguous key; use section.key");
      field = &f;
    }
  }
  if (!field) throw ConfigError(key, "unknown key");
  try {
    field->set(c, value);
  } catch (const ValidationError& e) {
    throw ConfigError(qualified(*field), e.what());
  }
}

// Parses and validates; defaults fill everything not mentioned.
inline ExperimentConfig parseConfig(std::string_view text) {
  using namespace config_detail;
  ExperimentConfig c;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::vector<std::string> seen;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(line_no, "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      bool known = false;
      for (const auto& f : fields()) known = known || f.section == section;
      if (!known) throw ParseError(line_no, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = stripComment(trim(std::string_view(line).substr(eq + 1)));
    if (key.empty()) throw ParseError(line_no, "missing key");
    if (section.empty()) throw ParseError(line_no, "key outside of a section");
    const Field* field = findField(section, key);
    if (!field) throw ConfigError(section + "." + key, "unknown key (line " + std::to_string(line_no) + ")");
    const std::string qkey = qualified(*field);
    for (const auto& s : seen) {
      if (s == qkey) throw ParseError(line_no, "duplicate key " + qkey);
    }
    seen.push_back(qkey);
    const bool is_quoted = value.size() >= 2 && value.front() == '"' && value.back() == '"';
    if (field->quoted) {
      if (!is_quoted) throw ParseError(line_no, qkey + " expects a quoted string");
      value = value.substr(1, value.size() - 2);
      if (value.find('"') != std::string::npos) throw ParseError(line_no, "stray quote in " + qkey);
    } else {
      if (!value.empty() && value.front() == '"') throw ParseError(line_no, qkey + " expects a bare value");
      if (value.empty()) throw ParseError(line_no, "missing value for " + qkey);
    }
    try {
      field->set(c, value);
    } catch (const ValidationError& e) {
      throw ConfigError(qkey, std::string(e.what()) + " (line " + std::to_string(line_no) + ")");
    }
  }
  validate(c);
  return c;
}

// Inverse of parseConfig: parseConfig(serializeConfig(c)) == c.
inline std::string serializeConfig(const ExperimentConfig& c) {
  using namespace config_detail;
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const auto v = f.get(c);
    if (!v) continue;
    if (f.section != section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + (f.quoted ? "\"" + *v + "\"" : *v) + "\n";
  }
  return out;
}

// Dataset described by the [data] section.
inline Dataset makeDataset(const ExperimentConfig& c) {
  switch (c.data) {
    case DataSource::quadratic_centers: {
      std::mt19937_64 rng(c.data_seed ^ 0x9e3779b97f4a7c15ULL);
      std::normal_distribution<double> normal(0.0, c.center_scale);
      std::vector<double> center(c.features);
      for (double& v : center) v = normal(rng);
      return quadraticCenters(c.samples, center, c.noise, c.data_seed);
    }
    case DataSource::gaussian_blobs:
      return gaussianBlobs(c.samples, c.features, c.classes, c.separation, c.spread, c.data_seed);
    case DataSource::linear_regression:
      return linearRegression(c.samples, c.features, c.noise, c.data_seed);
    case DataSource::csv:
      return loadCsv(c.data_path);
  }
  throw ConfigError("data.source", "unhandled data source");
}

inline std::shared_ptr<const Objective> makeObjective(const ExperimentConfig& c,
                                                      std::shared_ptr<const Dataset> data) {
  switch (c.objective) {
    case LossKind::quadratic: return std::make_shared<Quadratic>(std::move(data));
    case LossKind::logistic_regression: return std::make_shared<LogisticRegression>(std::move(data));
    case LossKind::mlp: return std::make_shared<Mlp>(std::move(data), c.widths);
  }
  throw ConfigError("objective.kind", "unhandled objective");
}

// x0: zeros for the convex objectives, seeded scaled-normal weights for the mlp.
inline std::vector<double> initialParams(const ExperimentConfig& c, const Objective& obj) {
  if (const auto* mlp = dynamic_cast<const Mlp*>(&obj)) return mlp->initialParams(c.init_seed);
  return std::vector<double>(obj.dim(), 0.0);
}

}  // namespace lppsgd
