#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "lppsgd/errors.hpp"

namespace lppsgd {

enum class LrKind { cosine, multistep };

// Learning rate indexed by the shared sample counter s (minibatches).
// Linear warm-up alpha0 -> peak over `warmup` minibatches, then either cosine
// annealing to zero at `total` or multistep decay by gamma per milestone.
struct LrSchedule {
  LrKind kind = LrKind::cosine;
  double alpha0 = 0.1;
  double peak = 0.1;
  std::uint64_t warmup = 0;
  std::uint64_t total = 1;
  std::vector<std::uint64_t> milestones;
  double gamma = 0.1;

  static LrSchedule constant(double alpha, std::uint64_t total) {
    LrSchedule s;
    s.kind = LrKind::multistep;
    s.alpha0 = alpha;
    s.peak = alpha;
    s.total = total;
    return s;
  }

  void validate() const {
    if (!(alpha0 >= 0.0)) throw ValidationError("lr: alpha0 must be non-negative");
    if (!(peak >= alpha0)) throw ValidationError("lr: peak must be >= alpha0");
    if (total == 0) throw ValidationError("lr: total must be positive");
    if (warmup > total) throw ValidationError("lr: warm-up must end within the budget");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("lr: gamma must be in (0, 1]");
    if (!std::is_sorted(milestones.begin(), milestones.end())) {
      throw ValidationError("lr: milestones must be sorted");
    }
  }

  double at(std::uint64_t s) const {
    if (s < warmup) {
      return alpha0 + (peak - alpha0) * static_cast<double>(s) / static_cast<double>(warmup);
    }
    if (kind == LrKind::cosine) {
      if (s >= total) return 0.0;
      const double span = static_cast<double>(total - warmup);
      const double progress = static_cast<double>(s - warmup) / span;
      return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
    const auto passed = std::upper_bound(milestones.begin(), milestones.end(), s) - milestones.begin();
    return peak * std::pow(gamma, static_cast<double>(passed));
  }
};

inline double lrAt(const LrSchedule& sched, std::uint64_t s) { return sched.at(s); }

// Warmed-up rate alpha0 * (B_loc * Q) / B_base.
inline double scaledPeak(double alpha0, std::uint64_t localBatch, std::uint64_t workers,
                         std::uint64_t baseBatch) {
  if (baseBatch == 0) throw ValidationError("base batch must be positive");
  return alpha0 * static_cast<double>(localBatch * workers) / static_cast<double>(baseBatch);
}

// Averaging period K as a function of the counter: 1 before switch_point, H after.
struct SyncScheme {
  std::uint64_t total = 1;
  std::uint64_t H = 16;
  std::uint64_t switch_point = 0;

  static SyncScheme postLocal(std::uint64_t total, std::uint64_t H) {
    return SyncScheme{total, H, total / 2};
  }

  void validate() const {
    if (H < 1) throw ValidationError("sync: H must be >= 1");
    if (switch_point > total) throw ValidationError("sync: switch point must be <= T");
  }

  std::uint64_t at(std::uint64_t s_cur) const { return s_cur < switch_point ? 1 : H; }
};

inline std::uint64_t syncK(const SyncScheme& scheme, std::uint64_t s_cur) { return scheme.at(s_cur); }

}  // namespace lppsgd
