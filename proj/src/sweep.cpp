#include "mccl/sweep.hpp"

#include "mccl/error.hpp"
#include "mccl/kv.hpp"
#include "mccl/trainer.hpp"

#include <spdlog/spdlog.h>

#include <iomanip>
#include <map>
#include <ostream>

namespace mccl::harness {

std::string sweep_key(const std::string& param) {
  static const std::map<std::string, std::string> aliases = {
      {"K", "cpi.k"}, {"k", "cpi.k"}, {"lambda", "mcc.lambda"}, {"tau", "mcc.tau"}, {"stages", "model.stages"}};
  if (auto it = aliases.find(param); it != aliases.end()) return it->second;
  RunConfig probe;
  for (const auto& kv : probe.to_key_values())
    if (kv.key == param) return param;
  throw ConfigError("unknown sweep parameter '" + param + "'");
}

std::vector<std::string> parse_sweep_values(const std::string& list) {
  const char sep = list.find(';') != std::string::npos ? ';' : ',';
  std::vector<std::string> out;
  for (const auto& v : split(list, sep)) {
    const auto t = trim(v);
    if (t.empty()) throw ConfigError("empty value in sweep list '" + list + "'");
    out.push_back(t);
  }
  if (out.empty()) throw ConfigError("sweep needs at least one value");
  return out;
}

std::vector<SweepRow> run_sweep(const RunConfig& base, const std::string& param,
                                const std::vector<std::string>& values, const data::Dataset& train,
                                const data::Dataset& eval) {
  const std::string key = sweep_key(param);
  std::vector<RunConfig> configs;
  for (const auto& v : values) {
    RunConfig c = base;
    c.set(key, v);
    c.validate();
    configs.push_back(c);
  }
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    spdlog::info("sweep {} = {}", key, values[i]);
    Trainer trainer(configs[i], train);
    trainer.fit(train, nullptr);
    rows.push_back({values[i], trainer.evaluate(eval, configs[i].threshold)});
  }
  return rows;
}

void write_sweep_table(std::ostream& out, const std::string& param, const std::vector<SweepRow>& rows) {
  out << std::left << std::setw(12) << param << std::right;
  for (const char* h : {"macro_f1", "micro_f1", "samples_f1", "mAP", "accuracy", "macro_auc"}) out << std::setw(12) << h;
  out << "\n" << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    out << std::left << std::setw(12) << r.value << std::right;
    for (double v : {r.report.macro_f1, r.report.micro_f1, r.report.samples_f1, r.report.mean_ap,
                     r.report.accuracy, r.report.macro_auc})
      out << std::setw(12) << 100.0 * v;
    out << "\n";
  }
  out.unsetf(std::ios::fixed);
}

}  // namespace mccl::harness
