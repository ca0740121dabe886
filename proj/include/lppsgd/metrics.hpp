#pragma once

// Metrics CSV (one row per evaluation point) and the per-algorithm summary
// over seeds. Both round-trip through their text form exactly.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lppsgd/dataset.hpp"
#include "lppsgd/errors.hpp"
#include "lppsgd/records.hpp"
#include "lppsgd/stats.hpp"

namespace lppsgd {

inline constexpr std::string_view kMetricsHeader =
    "algo,seed,wall_ms,samples,round,train_loss,grad_norm_sq,flops,p_hat";
inline constexpr std::string_view kSummaryHeader = "algo,metric,n,mean,std";

namespace metrics_detail {

inline std::vector<std::string> splitCsv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    out.emplace_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline std::uint64_t parseUint(const std::string& v, std::size_t line) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || v.empty()) {
    throw ParseError(line, "expected an integer, got '" + v + "'");
  }
  return out;
}

inline double parseReal(const std::string& v, std::size_t line) {
  try {
    return parseDouble(v);
  } catch (const ValidationError& e) {
    throw ParseError(line, e.what());
  }
}

// Yields the non-empty lines after checking the header.
inline std::vector<std::pair<std::size_t, std::string>> bodyLines(std::string_view text, std::string_view header) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!saw_header) {
      if (line != header) throw ParseError(n, "unexpected header '" + line + "'");
      saw_header = true;
      continue;
    }
    out.emplace_back(n, line);
  }
  if (!saw_header) throw ParseError(1, "missing header");
  return out;
}

}  // namespace metrics_detail

inline std::string metricsToCsv(const std::vector<MetricsRow>& rows) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += r.algo + ',' + std::to_string(r.seed) + ',' + formatDouble(r.wall_ms) + ',' + std::to_string(r.samples) +
           ',' + std::to_string(r.round) + ',' + formatDouble(r.train_loss) + ',' + formatDouble(r.grad_norm_sq) +
           ',' + std::to_string(r.flops) + ',' + formatDouble(r.p_hat) + '\n';
  }
  return out;
}

inline std::vector<MetricsRow> metricsFromCsv(std::string_view text) {
  using namespace metrics_detail;
  std::vector<MetricsRow> rows;
  for (const auto& [n, line] : bodyLines(text, kMetricsHeader)) {
    const auto f = splitCsv(line);
    if (f.size() != 9) throw ParseError(n, "expected 9 fields, got " + std::to_string(f.size()));
    MetricsRow r;
    r.algo = f[0];
    r.seed = parseUint(f[1], n);
    r.wall_ms = parseReal(f[2], n);
    r.samples = parseUint(f[3], n);
    r.round = parseUint(f[4], n);
    r.train_loss = parseReal(f[5], n);
    r.grad_norm_sq = parseReal(f[6], n);
    r.flops = parseUint(f[7], n);
    r.p_hat = parseReal(f[8], n);
    rows.push_back(std::move(r));
  }
  return rows;
}

struct SummaryRow {
  std::string algo;
  std::string metric;
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;

  friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

// Final-row statistics per algorithm, mean and sample std over seeds.
inline std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows) {
  // last row of each (algo, seed) run
  std::map<std::string, std::map<std::uint64_t, MetricsRow>> last;
  for (const auto& r : rows) last[r.algo][r.seed] = r;
  std::vector<SummaryRow> out;
  for (const auto& [algo, runs] : last) {
    std::map<std::string, std::vector<double>> cols;
    for (const auto& [seed, r] : runs) {
      cols["train_loss"].push_back(r.train_loss);
      cols["grad_norm_sq"].push_back(r.grad_norm_sq);
      cols["wall_ms"].push_back(r.wall_ms);
      cols["flops"].push_back(static_cast<double>(r.flops));
      cols["samples"].push_back(static_cast<double>(r.samples));
      cols["round"].push_back(static_cast<double>(r.round));
      cols["p_hat"].push_back(r.p_hat);
    }
    for (const auto& [metric, xs] : cols) {
      out.push_back({algo, metric, xs.size(), stats::mean(xs), stats::stddev(xs)});
    }
  }
  return out;
}

inline std::string summaryToCsv(const std::vector<SummaryRow>& rows) {
  std::string out(kSummaryHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += r.algo + ',' + r.metric + ',' + std::to_string(r.n) + ',' + formatDouble(r.mean) + ',' +
           formatDouble(r.std) + '\n';
  }
  return out;
}

inline std::vector<SummaryRow> summaryFromCsv(std::string_view text) {
  using namespace metrics_detail;
  std::vector<SummaryRow> rows;
  for (const auto& [n, line] : bodyLines(text, kSummaryHeader)) {
    const auto f = splitCsv(line);
    if (f.size() != 5) throw ParseError(n, "expected 5 fields, got " + std::to_string(f.size()));
    rows.push_back({f[0], f[1], static_cast<std::size_t>(parseUint(f[2], n)), parseReal(f[3], n), parseReal(f[4], n)});
  }
  return rows;
}

inline std::string readFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void writeFile(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

}  // namespace lppsgd
