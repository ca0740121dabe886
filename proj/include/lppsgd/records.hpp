#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace lppsgd {

// One model write by an updater.
struct UpdateRecord {
  std::uint32_t worker = 0;
  std::uint32_t updater = 0;      // rank 1..U
  std::uint64_t snapshot_order = 0;  // s
  std::uint64_t update_order = 0;    // u, 1-based per worker
  std::uint32_t block = 0;
  std::uint64_t block_begin = 0;  // first index of the written block
  double lr = 0.0;
  std::uint64_t flops = 0;
  std::uint64_t backward_flops = 0;
  // Update-order tags of the tracked indices as seen by the snapshot.
  std::vector<std::uint64_t> provenance;
  // Full recording only: the snapshot used and the applied step lr * g over the block.
  std::vector<double> snapshot;
  std::vector<double> delta;
  // Iteration order (j, t); filled in post hoc, -1 until then.
  std::int64_t round = -1;
  std::int64_t t = -1;
};

// One worker's side of an averaging round.
struct RoundParticipant {
  std::uint64_t snapshot_order = 0;  // s_cur read before the averaging snapshot
  std::uint64_t minor_count = 0;     // K_j^q = s_cur - s_pre
  std::uint64_t stamp = 0;           // update-order stamp taken before the in-place apply
  bool final_round = false;          // this worker's updaters were exhausted
  std::vector<double> snapshot;      // full recording only
  std::vector<double> delta;         // full recording only
  std::vector<double> post_apply;    // quiescent full recording only
};

struct AveragingRound {
  std::uint64_t j = 0;  // 1-based
  std::vector<RoundParticipant> workers;
  std::vector<double> mean;
};

struct MetricsRow {
  std::string algo;
  std::uint64_t seed = 0;
  double wall_ms = 0.0;
  std::uint64_t samples = 0;
  std::uint64_t round = 0;
  double train_loss = 0.0;
  double grad_norm_sq = 0.0;
  std::uint64_t flops = 0;
  double p_hat = 1.0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

}  // namespace lppsgd
