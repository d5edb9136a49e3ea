#include "mccl/mcc.hpp"

#include "mccl/error.hpp"

#include <string>

namespace mccl::mcc {

namespace {

const Eigen::MatrixXd& stage_prototypes(const cpi::PrototypeBank& bank, int stage, Eigen::Index width) {
  if (stage < 0 || stage >= bank.num_stages())
    throw ShapeError("prototype bank has no stage " + std::to_string(stage));
  const auto& protos = bank.prototypes[static_cast<std::size_t>(stage)];
  if (protos.cols() != width)
    throw ShapeError("stage " + std::to_string(stage) + ": patch width " + std::to_string(width) +
                     " differs from prototype width " + std::to_string(protos.cols()));
  return protos;
}

void check_tau(double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
}

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("momentum lambda must lie in [0, 1]");
}

}  // namespace

StageGraph build_stage_graph(ag::Var patches, const cpi::PrototypeBank& bank, int stage, double tau) {
  check_tau(tau);
  const auto& protos = stage_prototypes(bank, stage, patches.cols());
  ag::Tape& tape = *patches.tape();
  ag::Var proto = tape.constant(protos);
  ag::Var proto_norms = tape.constant(protos.rowwise().norm().transpose());  // 1 x K

  StageGraph g;
  ag::Var dots = ag::matmul_nt(patches, proto);
  ag::Var denom = ag::add_scalar(ag::matmul(ag::row_norms(patches), proto_norms), bank.epsilon);
  g.similarities = ag::div(dots, denom);
  g.weights = ag::softmax_rows(ag::scale(g.similarities, 1.0 / tau));
  g.reconstructed = ag::matmul(g.weights, proto);
  g.normalized = ag::normalize_rows(g.reconstructed, bank.epsilon);
  g.pooled = ag::mean_rows(g.normalized);
  return g;
}

AssignmentResult soft_assignment(const Eigen::MatrixXd& patches, const cpi::PrototypeBank& bank, int stage,
                                 double tau) {
  ag::Tape tape;
  const StageGraph g = build_stage_graph(tape.constant(patches), bank, stage, tau);
  return {g.weights.value(), g.similarities.value(), tau};
}

ReconstructedFeature reconstruct_feature_map(const Eigen::MatrixXd& patches, const AssignmentResult& assignment,
                                             const cpi::PrototypeBank& bank, int stage) {
  const auto& protos = stage_prototypes(bank, stage, patches.cols());
  if (assignment.weights.rows() != patches.rows() || assignment.weights.cols() != protos.rows())
    throw ShapeError("assignment shape does not match patches and prototypes");
  ReconstructedFeature out;
  out.patches = assignment.weights * protos;
  const Eigen::VectorXd norms = out.patches.rowwise().norm();
  out.normalized = out.patches.array().colwise() / (norms.array() + bank.epsilon);
  out.pooled = out.normalized.colwise().mean();
  return out;
}

void momentum_update(cpi::PrototypeBank& bank, int stage, const Eigen::MatrixXd& patches,
                     const Eigen::MatrixXd& weights, double lambda, double mass_floor) {
  check_lambda(lambda);
  stage_prototypes(bank, stage, patches.cols());
  auto& protos = bank.prototypes[static_cast<std::size_t>(stage)];
  if (weights.rows() != patches.rows() || weights.cols() != protos.rows())
    throw ShapeError("momentum_update: weights shape does not match patches and prototypes");
  if (lambda == 1.0) return;
  const Eigen::RowVectorXd mass = weights.colwise().sum();
  const Eigen::MatrixXd weighted = weights.transpose() * patches;  // K x D
  for (Eigen::Index k = 0; k < protos.rows(); ++k) {
    if (!(mass(k) > mass_floor)) continue;
    protos.row(k) = lambda * protos.row(k) + (1.0 - lambda) * (weighted.row(k) / mass(k));
  }
  ++bank.version;
}

StageOutput forward_stage(const Eigen::MatrixXd& patches, cpi::PrototypeBank& bank, int stage, double tau,
                          double lambda, bool training) {
  check_lambda(lambda);
  StageOutput out;
  out.assignment = soft_assignment(patches, bank, stage, tau);
  out.reconstructed = reconstruct_feature_map(patches, out.assignment, bank, stage);
  if (training) momentum_update(bank, stage, patches, out.assignment.weights, lambda);
  return out;
}

}  // namespace mccl::mcc
