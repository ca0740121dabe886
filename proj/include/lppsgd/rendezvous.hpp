#pragma once

// Blocking in-memory all-reduce among the Q averaging threads.
//
// Each caller deposits its vector and blocks until all Q have arrived; the
// last arrival sums the inputs in worker order and wakes everyone. A
// generation counter separates consecutive rounds.

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <span>
#include <vector>

#include "lppsgd/errors.hpp"

namespace lppsgd {

class AllReduceRendezvous {
 public:
  struct Result {
    std::vector<double> mean;
    bool all_final = false;
    std::vector<std::uint64_t> counters;  // per worker, as deposited
  };

  AllReduceRendezvous(std::size_t workers, std::size_t dim)
      : workers_(workers), dim_(dim), inputs_(workers * dim), finals_(workers), counters_(workers) {
    if (workers == 0) throw ValidationError("rendezvous needs at least one worker");
  }

  Result allReduce(std::size_t q, std::span<const double> v, bool final_round, std::uint64_t counter) {
    if (v.size() != dim_) throw ShapeError("allReduce: vector length mismatch");
    std::unique_lock lock(mu_);
    if (aborted_) throw RunError("rendezvous aborted");
    std::copy(v.begin(), v.end(), inputs_.begin() + static_cast<std::ptrdiff_t>(q * dim_));
    finals_[q] = final_round;
    counters_[q] = counter;
    const std::uint64_t gen = generation_;
    if (++arrived_ == workers_) {
      result_.mean.assign(dim_, 0.0);
      for (std::size_t w = 0; w < workers_; ++w) {
        for (std::size_t e = 0; e < dim_; ++e) result_.mean[e] += inputs_[w * dim_ + e];
      }
      for (double& m : result_.mean) m /= static_cast<double>(workers_);
      result_.all_final = true;
      for (bool f : finals_) result_.all_final = result_.all_final && f;
      result_.counters = counters_;
      arrived_ = 0;
      ++generation_;
      cv_.notify_all();
    } else {
      cv_.wait(lock, [&] { return generation_ != gen || aborted_; });
      if (generation_ == gen) throw RunError("rendezvous aborted");
    }
    return result_;
  }

  void abort() {
    {
      std::lock_guard lock(mu_);
      aborted_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::size_t workers_;
  std::size_t dim_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t arrived_ = 0;
  std::uint64_t generation_ = 0;
  bool aborted_ = false;
  std::vector<double> inputs_;
  std::vector<bool> finals_;
  std::vector<std::uint64_t> counters_;
  Result result_;
};

}  // namespace lppsgd
