#include "domex/retry.hpp"

#include <algorithm>
#include <cmath>

namespace domex {

std::chrono::milliseconds RetryPolicy::delay_for(std::size_t retry) const {
  const double scaled = static_cast<double>(initial_delay.count()) *
                        std::pow(multiplier, static_cast<double>(retry));
  const double capped = std::min(scaled, static_cast<double>(max_delay.count()));
  return std::chrono::milliseconds(static_cast<long long>(capped));
}

}  // namespace domex
