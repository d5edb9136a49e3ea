#pragma once

// Multi-label training loss and evaluation metrics.

#include "mccl/autograd.hpp"
#include "mccl/data.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <vector>

namespace mccl::metrics {

using ScoreMatrix = Eigen::MatrixXd;  // samples x classes, probabilities
using TruthMatrix = Eigen::MatrixXi;  // samples x classes, 0/1

inline constexpr double kProbClamp = 1e-8;

struct PredictionVector {
  Eigen::VectorXd probs;
  Eigen::VectorXi truth;
};

/// Simplified asymmetric loss, averaged over classes:
///   -[y (1-p)^g+ log p + (1-y) p^g- log(1-p)]
/// with p clamped to [1e-8, 1 - 1e-8].
double asymmetric_loss(const PredictionVector& prediction, double gamma_pos = 0.0, double gamma_neg = 2.0);

/// Batched, differentiable form: `probs` is samples x classes; the result is
/// the mean over every (sample, class) entry.
ag::Var asymmetric_loss(ag::Var probs, const Eigen::MatrixXd& targets, double gamma_pos = 0.0,
                        double gamma_neg = 2.0);

struct F1Scores {
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  double samples_f1 = 0.0;
  std::vector<double> per_class_f1;
};

/// A score >= threshold counts as a positive prediction. F1 of 0/0 is 0.
F1Scores f1_suite(const ScoreMatrix& scores, const TruthMatrix& truth, double threshold = 0.5);

struct AveragePrecision {
  double mean_ap = 0.0;
  std::vector<double> per_class_ap;   // NaN for skipped classes
  std::vector<int> skipped_classes;   // no positives
};

/// Non-interpolated AP: mean precision at each positive, scores ranked
/// descending with ties broken by sample index. Throws DataError when no
/// class has a positive.
AveragePrecision mean_average_precision(const ScoreMatrix& scores, const TruthMatrix& truth);

/// Mann-Whitney AUC of one class; ties count one half. NaN when either
/// positives or negatives are missing.
double roc_auc(const Eigen::VectorXd& scores, const Eigen::VectorXi& truth);

struct AccuracyAuc {
  double accuracy = 0.0;
  double macro_auc = 0.0;
  std::vector<int> skipped_classes;
};

/// Accuracy is the rate at which the top-scoring class is a true label
/// (argmax accuracy for one-hot truths). Macro AUC averages the classes that
/// have both positives and negatives.
AccuracyAuc accuracy_and_auc(const ScoreMatrix& scores, const TruthMatrix& truth, data::Mode mode);

struct MetricsReport {
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  double samples_f1 = 0.0;
  double mean_ap = 0.0;
  double accuracy = 0.0;
  double macro_auc = 0.0;
  std::vector<double> per_class_f1;
  std::vector<double> per_class_ap;
};

MetricsReport evaluate_scores(const ScoreMatrix& scores, const TruthMatrix& truth, data::Mode mode,
                              double threshold = 0.5);

/// Machine-readable `key: value` lines.
void write_key_values(std::ostream& out, const MetricsReport& report);
/// Human-readable table.
void write_table(std::ostream& out, const MetricsReport& report, const std::vector<std::string>& label_names);

}  // namespace mccl::metrics
