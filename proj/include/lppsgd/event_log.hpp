#pragma once

// Newline-delimited JSON event log, one object per line:
//
//   {"type":"update","worker":0,"updater":1,"s":5,"u":6,"block":0,"block_begin":0,
//    "lr":0.1,"flops":1024,"backward_flops":0,"provenance":[...],"snapshot":[...],"delta":[...]}
//   {"type":"round","j":1,"worker":0,"s_cur":8,"minor_count":8,"stamp":9,"final":false,
//    "snapshot":[...],"delta":[...]}
//
// snapshot/delta are present only for full recordings. Doubles are written
// with shortest round-trip precision, so reading the log back is lossless.

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lppsgd/errors.hpp"
#include "lppsgd/records.hpp"

namespace lppsgd {

struct EventLog {
  std::vector<UpdateRecord> records;
  std::vector<AveragingRound> rounds;
};

inline void writeEventLog(std::ostream& out, std::span<const UpdateRecord> records,
                          std::span<const AveragingRound> rounds) {
  for (const auto& r : records) {
    nlohmann::json j = {{"type", "update"},   {"worker", r.worker}, {"updater", r.updater},
                        {"s", r.snapshot_order}, {"u", r.update_order}, {"block", r.block},
                        {"block_begin", r.block_begin}, {"lr", r.lr}, {"flops", r.flops},
                        {"backward_flops", r.backward_flops}, {"provenance", r.provenance}};
    if (!r.snapshot.empty()) j["snapshot"] = r.snapshot;
    if (!r.delta.empty()) j["delta"] = r.delta;
    out << j.dump() << '\n';
  }
  for (const auto& round : rounds) {
    for (std::size_t q = 0; q < round.workers.size(); ++q) {
      const auto& p = round.workers[q];
      nlohmann::json j = {{"type", "round"}, {"j", round.j},   {"worker", q},
                          {"s_cur", p.snapshot_order}, {"minor_count", p.minor_count},
                          {"stamp", p.stamp}, {"final", p.final_round}};
      if (!p.snapshot.empty()) j["snapshot"] = p.snapshot;
      if (!p.delta.empty()) j["delta"] = p.delta;
      out << j.dump() << '\n';
    }
  }
}

inline EventLog readEventLog(std::istream& in) {
  EventLog log;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "update") {
        UpdateRecord r;
        r.worker = j.at("worker").get<std::uint32_t>();
        r.updater = j.at("updater").get<std::uint32_t>();
        r.snapshot_order = j.at("s").get<std::uint64_t>();
        r.update_order = j.at("u").get<std::uint64_t>();
        r.block = j.at("block").get<std::uint32_t>();
        r.block_begin = j.at("block_begin").get<std::uint64_t>();
        r.lr = j.at("lr").get<double>();
        r.flops = j.at("flops").get<std::uint64_t>();
        r.backward_flops = j.at("backward_flops").get<std::uint64_t>();
        r.provenance = j.at("provenance").get<std::vector<std::uint64_t>>();
        if (j.contains("snapshot")) r.snapshot = j["snapshot"].get<std::vector<double>>();
        if (j.contains("delta")) r.delta = j["delta"].get<std::vector<double>>();
        log.records.push_back(std::move(r));
      } else if (type == "round") {
        const auto jj = j.at("j").get<std::uint64_t>();
        const auto q = j.at("worker").get<std::size_t>();
        if (jj == 0) throw ParseError(n, "round numbers start at 1");
        if (log.rounds.size() < jj) log.rounds.resize(jj);
        auto& round = log.rounds[jj - 1];
        round.j = jj;
        if (round.workers.size() <= q) round.workers.resize(q + 1);
        auto& p = round.workers[q];
        p.snapshot_order = j.at("s_cur").get<std::uint64_t>();
        p.minor_count = j.at("minor_count").get<std::uint64_t>();
        p.stamp = j.at("stamp").get<std::uint64_t>();
        p.final_round = j.at("final").get<bool>();
        if (j.contains("snapshot")) p.snapshot = j["snapshot"].get<std::vector<double>>();
        if (j.contains("delta")) p.delta = j["delta"].get<std::vector<double>>();
      } else {
        throw ParseError(n, "unknown event type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(n, e.what());
    }
  }
  return log;
}

}  // namespace lppsgd
