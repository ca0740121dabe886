#pragma once

// In-memory datasets, the "feature...,label" CSV format, and seeded synthetic
// generators.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "lppsgd/errors.hpp"

namespace lppsgd {

struct Dataset {
  std::size_t features = 0;
  std::vector<double> x;       // row-major, size() * features
  std::vector<double> labels;  // one per row

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(x).subspan(i * features, features);
  }
  int classLabel(std::size_t i) const { return static_cast<int>(std::lround(labels[i])); }

  void push(std::span<const double> feats, double label) {
    if (feats.size() != features) throw ShapeError("dataset row has wrong feature count");
    x.insert(x.end(), feats.begin(), feats.end());
    labels.push_back(label);
  }
};

// Shortest decimal text that parses back to the same double.
inline std::string formatDouble(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parseDouble(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
    text.remove_suffix(1);
  }
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ValidationError("not a number: '" + std::string(text) + "'");
  }
  return v;
}

inline std::string datasetToCsv(const Dataset& ds) {
  std::string out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double f : ds.row(i)) {
      out += formatDouble(f);
      out += ',';
    }
    out += formatDouble(ds.labels[i]);
    out += '\n';
  }
  return out;
}

inline Dataset datasetFromCsv(std::string_view text) {
  Dataset ds;
  bool first = true;
  std::size_t line_no = 0;
  std::vector<double> fields;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line == "\r") continue;
    fields.clear();
    std::size_t pos = 0;
    while (true) {
      const auto comma = line.find(',', pos);
      try {
        fields.push_back(parseDouble(line.substr(pos, comma == std::string_view::npos ? comma : comma - pos)));
      } catch (const ValidationError& e) {
        throw ValidationError("csv line " + std::to_string(line_no) + ": " + e.what());
      }
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (fields.size() < 2) {
      throw ValidationError("csv line " + std::to_string(line_no) + ": need at least one feature and a label");
    }
    if (first) {
      ds.features = fields.size() - 1;
      first = false;
    } else if (fields.size() - 1 != ds.features) {
      throw ValidationError("csv line " + std::to_string(line_no) + ": inconsistent column count");
    }
    ds.push(std::span<const double>(fields).first(ds.features), fields.back());
  }
  if (ds.size() == 0) throw ValidationError("csv has no rows");
  return ds;
}

inline Dataset loadCsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return datasetFromCsv(buf.str());
}

inline void saveCsv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << datasetToCsv(ds);
}

// k isotropic Gaussian clusters; class c's center sits at distance
// `separation` along a seeded random direction. Labels are 0..k-1.
inline Dataset gaussianBlobs(std::size_t samples, std::size_t features, std::size_t classes,
                             double separation, double spread, std::uint64_t seed) {
  if (samples == 0) throw ValidationError("gaussianBlobs: samples must be positive");
  if (features == 0) throw ValidationError("gaussianBlobs: features must be positive");
  if (classes < 2) throw ValidationError("gaussianBlobs: need at least two classes");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> centers(classes * features);
  for (std::size_t c = 0; c < classes; ++c) {
    double norm = 0.0;
    for (std::size_t f = 0; f < features; ++f) {
      centers[c * features + f] = normal(rng);
      norm += centers[c * features + f] * centers[c * features + f];
    }
    norm = std::sqrt(norm);
    for (std::size_t f = 0; f < features; ++f) centers[c * features + f] *= separation / norm;
  }
  Dataset ds;
  ds.features = features;
  std::vector<double> row(features);
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t c = i % classes;
    for (std::size_t f = 0; f < features; ++f) row[f] = centers[c * features + f] + spread * normal(rng);
    ds.push(row, static_cast<double>(c));
  }
  return ds;
}

// y = w . x + noise with seeded standard-normal w and x.
inline Dataset linearRegression(std::size_t samples, std::size_t features, double noise,
                                std::uint64_t seed) {
  if (samples == 0) throw ValidationError("linearRegression: samples must be positive");
  if (features == 0) throw ValidationError("linearRegression: features must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> w(features);
  for (double& v : w) v = normal(rng);
  Dataset ds;
  ds.features = features;
  std::vector<double> row(features);
  for (std::size_t i = 0; i < samples; ++i) {
    double y = 0.0;
    for (std::size_t f = 0; f < features; ++f) {
      row[f] = normal(rng);
      y += w[f] * row[f];
    }
    ds.push(row, y + noise * normal(rng));
  }
  return ds;
}

// Rows c_k = center + noise * N(0, I); the quadratic objective's samples.
inline Dataset quadraticCenters(std::size_t samples, std::span<const double> center, double noise,
                                std::uint64_t seed) {
  if (samples == 0) throw ValidationError("quadraticCenters: samples must be positive");
  if (center.empty()) throw ValidationError("quadraticCenters: dimension must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.features = center.size();
  std::vector<double> row(center.size());
  for (std::size_t i = 0; i < samples; ++i) {
    for (std::size_t f = 0; f < center.size(); ++f) row[f] = center[f] + noise * normal(rng);
    ds.push(row, 0.0);
  }
  return ds;
}

}  // namespace lppsgd
