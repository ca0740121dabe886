#pragma once

#include <cstddef>
#include <ostream>

namespace lppsgd {

// Half-open interval [begin, end) over the flat parameter vector.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  constexpr std::size_t size() const noexcept { return end - begin; }
  constexpr bool empty() const noexcept { return end == begin; }
  constexpr bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }

  friend constexpr bool operator==(const IndexRange&, const IndexRange&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const IndexRange& r) {
  return os << '[' << r.begin << ',' << r.end << ')';
}

}  // namespace lppsgd
