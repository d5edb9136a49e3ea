#pragma once

// Prototype-category correlation and prototype usage.

#include "mccl/cpi.hpp"
#include "mccl/data.hpp"
#include "mccl/model.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <vector>

namespace mccl::analysis {

struct StageAnalysis {
  Eigen::MatrixXd correlation;  // C x K; row c = mean assignment over patches of class-c samples, normalized
  Eigen::VectorXd usage;        // K; total assignment mass over every patch
  std::vector<bool> dead;       // usage below dead_fraction * mean usage
};

struct PrototypeAnalysis {
  std::vector<StageAnalysis> stages;
  std::vector<int> owner;
};

/// Row c of the correlation matrix averages the soft assignments of every
/// patch of every sample positive for c, then is scaled to sum to one. Classes
/// without positives keep a zero row. Throws DataError on an empty dataset.
StageAnalysis correlate(const std::vector<Eigen::MatrixXd>& sample_weights,
                        const std::vector<std::vector<int>>& labels, int num_classes, double dead_fraction = 0.01);

/// Runs the backbone on `dataset` with the current parameters and assigns
/// every patch to the bank.
PrototypeAnalysis analyze_prototypes(model::Model& model, const cpi::PrototypeBank& bank,
                                     const data::Dataset& dataset, double tau, double dead_fraction = 0.01);

/// Fraction of classes whose owned prototypes carry the largest entry of
/// their correlation row. Classes without a row mass are skipped.
double owner_dominance(const Eigen::MatrixXd& correlation, const std::vector<int>& owner);

/// Writes correlation_stageJ.csv, usage_stageJ.csv and heatmap_stageJ.pgm
/// per stage plus a summary.
void write_analysis(const PrototypeAnalysis& analysis, const std::vector<std::string>& label_names,
                    const std::filesystem::path& dir);

}  // namespace mccl::analysis
