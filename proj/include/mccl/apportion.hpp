#pragma once

#include <vector>

namespace mccl {

/// Largest-remainder apportionment of `seats` integer seats to real quotas
/// that sum to `seats`. Ties go to the lower index.
std::vector<long> largest_remainder(const std::vector<double>& quotas, long seats);

}  // namespace mccl
