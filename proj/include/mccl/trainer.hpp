#pragma once

// Training, evaluation and checkpointing of one run.
//
// Every step: forward both branches of every selected stage, asymmetric
// loss, AdamW under the one-cycle schedule, EMA shadow update, then one
// momentum update of the prototype bank per stage (after the optimizer step).
// Evaluation swaps the EMA shadow in and never touches the bank.

#include "mccl/config.hpp"
#include "mccl/cpi.hpp"
#include "mccl/data.hpp"
#include "mccl/metrics.hpp"
#include "mccl/model.hpp"
#include "mccl/optim.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <vector>

namespace mccl::harness {

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<metrics::MetricsReport> eval;
};

class Trainer {
 public:
  /// Fresh run. The prototype bank is read from `cpi.init_bank` when set and
  /// otherwise built from `train` with the initial backbone.
  Trainer(RunConfig config, const data::Dataset& train);

  /// Runs one epoch and returns the mean training loss. `lr_log` receives a
  /// "step lr" line per optimizer step.
  double train_epoch(const data::Dataset& train, std::ostream* lr_log = nullptr);

  /// Trains the remaining epochs of the configured schedule, evaluating on
  /// `eval` (when given) after each one. Each epoch appends one line to
  /// `metrics_log`.
  std::vector<EpochRecord> fit(const data::Dataset& train, const data::Dataset* eval,
                               std::ostream* metrics_log = nullptr, std::ostream* lr_log = nullptr);

  /// Scores with the EMA parameters; the bank is left untouched.
  Eigen::MatrixXd predict(const data::Dataset& dataset);
  metrics::MetricsReport evaluate(const data::Dataset& dataset, double threshold);

  /// Holds the EMA shadow in the model's parameters for its lifetime.
  class EmaScope {
   public:
    explicit EmaScope(Trainer& t) : params_(t.model_.parameters()), saved_(t.ema_.swap_in(params_)) {}
    ~EmaScope() { optim::Ema::restore(params_, saved_); }
    EmaScope(const EmaScope&) = delete;
    EmaScope& operator=(const EmaScope&) = delete;

   private:
    nn::ParamList params_;
    std::vector<Eigen::MatrixXd> saved_;
  };

  void save(const std::filesystem::path& path);
  static Trainer load(const std::filesystem::path& path);

  const RunConfig& config() const { return config_; }
  const data::DatasetManifest& manifest() const { return manifest_; }
  model::Model& model() { return model_; }
  const cpi::PrototypeBank& bank() const { return bank_; }
  const optim::Ema& ema() const { return ema_; }
  const optim::OneCycleSchedule& schedule() const { return schedule_; }
  long step() const { return step_; }
  int epoch() const { return epoch_; }
  long steps_per_epoch() const { return steps_per_epoch_; }

 private:
  Trainer(RunConfig config, data::DatasetManifest manifest, Eigen::MatrixXd embeddings, long steps_per_epoch);

  RunConfig config_;
  data::DatasetManifest manifest_;
  model::Model model_;
  cpi::PrototypeBank bank_;
  optim::AdamW adam_;
  optim::Ema ema_;
  long steps_per_epoch_ = 1;
  optim::OneCycleSchedule schedule_;
  long step_ = 0;
  int epoch_ = 0;
  std::mt19937_64 rng_;
};

/// Label embeddings for a run: the configured file, or deterministic
/// fallback vectors derived from the label names.
Eigen::MatrixXd run_label_embeddings(const RunConfig& config, const data::DatasetManifest& manifest);

/// Prototype bank from the backbone features of the selected stages.
cpi::PrototypeBank initialize_bank(const RunConfig& config, model::Model& model, const data::Dataset& train);

metrics::TruthMatrix truth_matrix(const data::Dataset& dataset);

/// One `key: value` line per epoch, fixed formatting so logs diff cleanly.
void write_epoch_line(std::ostream& out, const EpochRecord& record);

}  // namespace mccl::harness
