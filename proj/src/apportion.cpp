#include "mccl/apportion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mccl {

std::vector<long> largest_remainder(const std::vector<double>& quotas, long seats) {
  std::vector<long> out(quotas.size());
  std::vector<double> rem(quotas.size());
  long used = 0;
  for (std::size_t i = 0; i < quotas.size(); ++i) {
    const double f = std::floor(quotas[i]);
    out[i] = static_cast<long>(f);
    rem[i] = quotas[i] - f;
    used += out[i];
  }
  std::vector<std::size_t> order(quotas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  // Floating sums can leave `left` off by one at the extremes; clamp to the
  // number of classes so the loop stays well defined.
  long left = std::clamp(seats - used, 0L, static_cast<long>(quotas.size()));
  for (std::size_t i = 0; i < order.size() && left > 0; ++i, --left) ++out[order[i]];
  return out;
}

}  // namespace mccl
