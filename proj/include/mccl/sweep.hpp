#pragma once

// One full train + evaluate per value of a single hyperparameter.

#include "mccl/config.hpp"
#include "mccl/data.hpp"
#include "mccl/metrics.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace mccl::harness {

struct SweepRow {
  std::string value;
  metrics::MetricsReport report;
};

/// Config key for a sweep parameter: K, lambda, tau, stages, or any full
/// config key. Throws ConfigError for unknown names.
std::string sweep_key(const std::string& param);

/// Values are comma separated; a list containing ';' is split on ';' instead
/// so that stage lists ("-1;-2,-1") can be swept.
std::vector<std::string> parse_sweep_values(const std::string& list);

/// Every value is validated before the first run starts.
std::vector<SweepRow> run_sweep(const RunConfig& base, const std::string& param,
                                const std::vector<std::string>& values, const data::Dataset& train,
                                const data::Dataset& eval);

void write_sweep_table(std::ostream& out, const std::string& param, const std::vector<SweepRow>& rows);

}  // namespace mccl::harness
