#pragma once

// Differentiable online clustering layer.
//
//   sim[i,k] = <E_i, P_k> / (|E_i| |P_k| + eps)
//   W[i,:]   = softmax(sim[i,:] / tau)
//   R_i      = sum_k W[i,k] P_k          (convex combination of prototypes)
//   pooled   = mean_i R_i / |R_i|
//
// Prototypes enter the graph as constants; they move only through
// momentum_update, which runs outside the gradient path.

#include "mccl/autograd.hpp"
#include "mccl/cpi.hpp"

#include <Eigen/Dense>

namespace mccl::mcc {

inline constexpr double kMassFloor = 1e-4;

struct AssignmentResult {
  Eigen::MatrixXd weights;       // P x K, rows on the simplex
  Eigen::MatrixXd similarities;  // P x K, in [-1, 1]
  double temperature = 0.1;
};

struct ReconstructedFeature {
  Eigen::MatrixXd patches;     // P x D convex combinations, before normalization
  Eigen::MatrixXd normalized;  // P x D unit rows
  Eigen::RowVectorXd pooled;   // mean of the normalized rows
};

/// Graph handles for one stage, used by the model.
struct StageGraph {
  ag::Var similarities;
  ag::Var weights;
  ag::Var reconstructed;
  ag::Var normalized;
  ag::Var pooled;
};

StageGraph build_stage_graph(ag::Var patches, const cpi::PrototypeBank& bank, int stage, double tau);

AssignmentResult soft_assignment(const Eigen::MatrixXd& patches, const cpi::PrototypeBank& bank, int stage,
                                 double tau);

ReconstructedFeature reconstruct_feature_map(const Eigen::MatrixXd& patches, const AssignmentResult& assignment,
                                             const cpi::PrototypeBank& bank, int stage);

/// EMA update towards the soft-assignment-weighted mean of `patches`:
/// P_k <- lambda P_k + (1 - lambda) target_k for every prototype whose mass
/// sum_i W[i,k] exceeds `mass_floor`. `patches` may stack a whole batch.
void momentum_update(cpi::PrototypeBank& bank, int stage, const Eigen::MatrixXd& patches,
                     const Eigen::MatrixXd& weights, double lambda, double mass_floor = kMassFloor);

struct StageOutput {
  ReconstructedFeature reconstructed;
  AssignmentResult assignment;
};

/// Assignment + reconstruction from the current bank; in training mode the
/// bank is then moved by one momentum step.
StageOutput forward_stage(const Eigen::MatrixXd& patches, cpi::PrototypeBank& bank, int stage, double tau,
                          double lambda, bool training);

}  // namespace mccl::mcc
