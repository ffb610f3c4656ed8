#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <string>
#include <thread>

#include "domex/error.hpp"

namespace domex {

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline void real_sleep(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

/// Capped exponential backoff: the k-th retry waits
/// min(max_delay, initial_delay * multiplier^k).
struct RetryPolicy {
  std::size_t max_attempts = 4;
  std::chrono::milliseconds initial_delay{200};
  std::chrono::milliseconds max_delay{5000};
  double multiplier = 2.0;

  std::chrono::milliseconds delay_for(std::size_t retry) const;
};

/// Calls `op` until it succeeds, retrying only on ErrorKind::backend. The
/// final failure is rethrown as a StageError that names `what`.
template <typename Op>
auto with_retries(const RetryPolicy& policy, const Sleeper& sleeper, const std::string& what,
                  Op&& op) -> decltype(op()) {
  const std::size_t attempts = policy.max_attempts == 0 ? 1 : policy.max_attempts;
  for (std::size_t attempt = 1;; ++attempt) {
    try {
      return op();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::backend) throw;
      if (attempt >= attempts) {
        throw StageError(what + " failed after " + std::to_string(attempts) +
                             " attempt(s): " + e.what(),
                         0);
      }
      if (sleeper) sleeper(policy.delay_for(attempt - 1));
    }
  }
}

}  // namespace domex
