#pragma once

// Block partitioning of the flat parameter vector and the block selection
// rule used by partial-gradient updaters.
//
// Block 0 is the whole vector. Blocks 1..U are the disjoint sub-intervals
// between consecutive boundaries b_{i-1} < b_i, with b_0 = 0 and b_U = d.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lppsgd/errors.hpp"
#include "lppsgd/index_range.hpp"

namespace lppsgd {

class BlockPartition {
 public:
  BlockPartition() = default;

  std::size_t dim() const noexcept { return dim_; }
  std::size_t partitions() const noexcept { return boundaries_.empty() ? 0 : boundaries_.size() - 1; }
  std::span<const std::size_t> boundaries() const noexcept { return boundaries_; }

  IndexRange block(std::size_t id) const {
    if (id == 0) return {0, dim_};
    if (id > partitions()) throw BoundsError("block id " + std::to_string(id) + " out of range");
    return {boundaries_[id - 1], boundaries_[id]};
  }

  // The partition block (1..U) containing index e.
  std::size_t blockOf(std::size_t e) const {
    if (e >= dim_) throw BoundsError("index out of range");
    for (std::size_t i = 1; i <= partitions(); ++i) {
      if (e < boundaries_[i]) return i;
    }
    return partitions();
  }

  friend BlockPartition makePartition(std::size_t d, std::vector<std::size_t> boundaries);

 private:
  std::size_t dim_ = 0;
  std::vector<std::size_t> boundaries_;
};

inline BlockPartition makePartition(std::size_t d, std::vector<std::size_t> boundaries) {
  if (boundaries.size() < 2) throw ValidationError("partition needs at least two boundaries");
  if (boundaries.front() != 0) throw ValidationError("partition boundaries must start at 0");
  if (boundaries.back() != d) throw ValidationError("partition boundaries must end at d");
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (boundaries[i] <= boundaries[i - 1]) {
      throw ValidationError("partition boundaries must be strictly increasing");
    }
  }
  BlockPartition p;
  p.dim_ = d;
  p.boundaries_ = std::move(boundaries);
  return p;
}

// Near-equal contiguous split of [0, d) into U intervals.
inline BlockPartition evenPartition(std::size_t d, std::size_t U) {
  if (U == 0 || U > d) throw ValidationError("evenPartition: need 1 <= U <= d");
  std::vector<std::size_t> b(U + 1);
  for (std::size_t i = 0; i <= U; ++i) b[i] = (d * i) / U;
  return makePartition(d, std::move(b));
}

namespace detail {

// Enumerates every way to cut `n` layers into `U` contiguous non-empty groups,
// passing the group end indices (exclusive, last == n) to `visit`.
template <typename Visit>
void forEachComposition(std::size_t n, std::size_t U, Visit&& visit) {
  std::vector<std::size_t> ends(U);
  auto rec = [&](auto&& self, std::size_t group, std::size_t start) -> void {
    if (group + 1 == U) {
      ends[group] = n;
      visit(std::span<const std::size_t>(ends));
      return;
    }
    const std::size_t remaining_groups = U - group - 1;
    for (std::size_t end = start + 1; end + remaining_groups <= n; ++end) {
      ends[group] = end;
      self(self, group + 1, end);
    }
  };
  rec(rec, 0, 0);
}

}  // namespace detail

// Layer-aligned boundaries for U partial-backprop blocks. `layerSizes` are the
// parameter counts of the layers from input to output; each layer's backward
// cost is taken proportional to its size. Minimizes the largest per-block
// backward work, breaking ties by the smaller total truncated-backprop cost
// (output layer down to each block's deepest layer). Exhaustive search.
inline std::vector<std::size_t> balancedBoundaries(std::span<const std::size_t> layerSizes,
                                                   std::size_t U) {
  const std::size_t n = layerSizes.size();
  if (U == 0) throw ValidationError("balancedBoundaries: U must be >= 1");
  if (U > n) throw ValidationError("balancedBoundaries: U exceeds layer count");
  for (std::size_t s : layerSizes) {
    if (s == 0) throw ValidationError("balancedBoundaries: layer sizes must be positive");
  }
  std::vector<std::size_t> prefix(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + layerSizes[i];
  const std::size_t total = prefix[n];

  std::size_t best_max = std::numeric_limits<std::size_t>::max();
  std::size_t best_sum = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> best;
  detail::forEachComposition(n, U, [&](std::span<const std::size_t> ends) {
    std::size_t worst = 0;
    std::size_t truncated_sum = 0;
    std::size_t begin = 0;
    for (std::size_t end : ends) {
      worst = std::max(worst, prefix[end] - prefix[begin]);
      truncated_sum += total - prefix[begin];
      begin = end;
    }
    if (worst < best_max || (worst == best_max && truncated_sum < best_sum)) {
      best_max = worst;
      best_sum = truncated_sum;
      best.assign(1, 0);
      for (std::size_t end : ends) best.push_back(prefix[end]);
    }
  });
  return best;
}

enum class SelectionReason { warm_start, alternate_full, alternate_partial };

struct BlockChoice {
  std::size_t block_id = 0;
  SelectionReason reason = SelectionReason::warm_start;
};

// Block selection rule: the full model while s <= warmStart, then alternate,
// with (s - warmStart) odd selecting the full model and even selecting the
// updater's own block `rank` (1-based).
inline BlockChoice selectBlock(std::uint64_t s, std::uint64_t warmStart, std::size_t rank) {
  if (s <= warmStart) return {0, SelectionReason::warm_start};
  if ((s - warmStart) % 2 == 1) return {0, SelectionReason::alternate_full};
  return {rank, SelectionReason::alternate_partial};
}

}  // namespace lppsgd
