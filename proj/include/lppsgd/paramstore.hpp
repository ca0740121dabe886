#pragma once

// Lock-free shared parameter storage for one worker.
//
// Every scalar lives in its own 64-bit atomic word holding the bit pattern of
// a double. Read-modify-write goes through a compare-and-swap loop, so a
// concurrent update to the same index is never lost. Nothing in this header
// takes a lock.

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "lppsgd/errors.hpp"
#include "lppsgd/index_range.hpp"

namespace lppsgd {

static_assert(sizeof(double) == sizeof(std::uint64_t));
static_assert(std::atomic<std::uint64_t>::is_always_lock_free);

// Per-element copy of a store; whole-vector consistency is not implied.
struct Snapshot {
  std::vector<double> values;
  std::uint64_t order = 0;  // snapshot order s, set by the caller
  // Update-order tags of the tracked indices, read just before each value.
  std::vector<std::uint64_t> provenance;
};

// Indices that carry writer update-order tags in a shadow array.
// Every index is tracked when d <= full_threshold; otherwise a seeded sample.
inline std::vector<std::size_t> chooseTrackedIndices(std::size_t d, std::size_t sample,
                                                     std::uint64_t seed,
                                                     std::size_t full_threshold = 64) {
  std::vector<std::size_t> all(d);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (d <= full_threshold || sample >= d) return all;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> picked;
  picked.reserve(sample);
  std::sample(all.begin(), all.end(), std::back_inserter(picked), sample, rng);
  return picked;  // std::sample keeps ascending order
}

class ParamStore {
 public:
  static constexpr std::int32_t kUntracked = -1;

  explicit ParamStore(std::span<const double> initial, std::vector<std::size_t> tracked = {})
      : size_(initial.size()),
        values_(std::make_unique<std::atomic<std::uint64_t>[]>(initial.size())),
        slot_of_(initial.size(), kUntracked),
        tracked_(std::move(tracked)),
        tags_(std::make_unique<std::atomic<std::uint64_t>[]>(tracked_.size())) {
    for (std::size_t i = 0; i < size_; ++i) {
      values_[i].store(std::bit_cast<std::uint64_t>(initial[i]), std::memory_order_relaxed);
    }
    for (std::size_t k = 0; k < tracked_.size(); ++k) {
      if (tracked_[k] >= size_) throw BoundsError("tracked index out of range");
      if (k > 0 && tracked_[k] <= tracked_[k - 1]) {
        throw ValidationError("tracked indices must be strictly increasing");
      }
      slot_of_[tracked_[k]] = static_cast<std::int32_t>(k);
      tags_[k].store(0, std::memory_order_relaxed);
    }
    std::atomic_thread_fence(std::memory_order_release);
  }

  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  std::size_t size() const noexcept { return size_; }
  std::span<const std::size_t> trackedIndices() const noexcept { return tracked_; }

  // Shared iteration counter: returns the pre-increment value.
  std::uint64_t readAndInc() noexcept { return counter_.fetch_add(1, std::memory_order_seq_cst); }
  std::uint64_t read() const noexcept { return counter_.load(std::memory_order_seq_cst); }

  // The update order the next model write will receive. Update orders start at 1.
  std::uint64_t nextUpdateOrder() const noexcept {
    return update_order_.load(std::memory_order_seq_cst) + 1;
  }
  std::uint64_t updatesIssued() const noexcept {
    return update_order_.load(std::memory_order_seq_cst);
  }

  double load(std::size_t i) const {
    if (i >= size_) throw BoundsError("ParamStore::load index out of range");
    return std::bit_cast<double>(values_[i].load(std::memory_order_relaxed));
  }

  Snapshot collectSnapshot(std::uint64_t order = 0) const {
    Snapshot snap;
    collectInto(snap);
    snap.order = order;
    return snap;
  }

  // Ascending-index lock-free collect into a caller-owned buffer. For tracked
  // indices the tag is read (acquire) before the value, so a reported tag is
  // never newer than the value read after it.
  void collectInto(Snapshot& snap) const {
    snap.values.resize(size_);
    snap.provenance.resize(tracked_.size());
    for (std::size_t i = 0; i < size_; ++i) {
      const std::int32_t slot = slot_of_[i];
      if (slot != kUntracked) {
        snap.provenance[static_cast<std::size_t>(slot)] =
            tags_[static_cast<std::size_t>(slot)].load(std::memory_order_acquire);
      }
      snap.values[i] = std::bit_cast<double>(values_[i].load(std::memory_order_relaxed));
    }
  }

  std::vector<double> values() const {
    std::vector<double> out(size_);
    for (std::size_t i = 0; i < size_; ++i) {
      out[i] = std::bit_cast<double>(values_[i].load(std::memory_order_relaxed));
    }
    return out;
  }

  // values[range] -= delta, element-wise atomic. Takes the next update order
  // before writing and returns it.
  std::uint64_t atomicSubAssign(IndexRange range, std::span<const double> delta) {
    if (range.begin > range.end || range.end > size_) {
      throw BoundsError("atomicSubAssign: range out of bounds");
    }
    if (delta.size() != range.size()) throw ShapeError("atomicSubAssign: delta length mismatch");
    const std::uint64_t u = update_order_.fetch_add(1, std::memory_order_seq_cst) + 1;
    for (std::size_t k = 0; k < delta.size(); ++k) {
      const std::size_t e = range.begin + k;
      rmw(e, -delta[k]);
      tag(e, u);
    }
    return u;
  }

  // values += delta over the full vector; tracked indices are tagged with
  // `stamp` (the averager's update-order stamp).
  void atomicAddAssign(std::span<const double> delta, std::uint64_t stamp) {
    if (delta.size() != size_) throw ShapeError("atomicAddAssign: delta length must equal d");
    for (std::size_t e = 0; e < size_; ++e) {
      rmw(e, delta[e]);
      tag(e, stamp);
    }
  }

  std::uint64_t atomicAddAssign(std::span<const double> delta) {
    const std::uint64_t stamp = nextUpdateOrder();
    atomicAddAssign(delta, stamp);
    return stamp;
  }

 private:
  void rmw(std::size_t e, double add) noexcept {
    auto& word = values_[e];
    std::uint64_t cur = word.load(std::memory_order_relaxed);
    while (!word.compare_exchange_weak(
        cur, std::bit_cast<std::uint64_t>(std::bit_cast<double>(cur) + add),
        std::memory_order_relaxed, std::memory_order_relaxed)) {
    }
  }

  void tag(std::size_t e, std::uint64_t u) noexcept {
    const std::int32_t slot = slot_of_[e];
    if (slot != kUntracked) tags_[static_cast<std::size_t>(slot)].store(u, std::memory_order_release);
  }

  std::size_t size_;
  std::unique_ptr<std::atomic<std::uint64_t>[]> values_;
  std::vector<std::int32_t> slot_of_;
  std::vector<std::size_t> tracked_;
  std::unique_ptr<std::atomic<std::uint64_t>[]> tags_;
  std::atomic<std::uint64_t> counter_{0};
  std::atomic<std::uint64_t> update_order_{0};
};

}  // namespace lppsgd
