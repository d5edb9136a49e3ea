#pragma once

// Prior knowledge infusion: label embeddings, a label graph built from their
// cosine correlations, a two-layer GCN, transformer-decoder query refinement
// and the per-class sigmoid head.

#include "mccl/autograd.hpp"
#include "mccl/nn.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace mccl::pki {

using ag::Tape;
using ag::Var;

inline constexpr double kGcnSlope = 0.2;

struct LabelPrior {
  std::vector<std::string> descriptions;
  Eigen::MatrixXd raw_embeddings;  // C x D_e
  Eigen::MatrixXd adjacency;       // C x C, row-stochastic
};

/// Reads the label embedding file: a "C D_e" header line followed by one
/// whitespace-separated row per label. Throws DataError when the row count
/// differs from `num_classes` or an entry is not finite.
Eigen::MatrixXd load_label_embeddings(const std::filesystem::path& path, int num_classes);
void save_label_embeddings(const Eigen::MatrixXd& embeddings, const std::filesystem::path& path);

/// Deterministic unit vectors seeded by a hash of each label string. Uses only
/// integer arithmetic for the random stream, so results match across runs.
Eigen::MatrixXd fallback_label_embeddings(const std::vector<std::string>& label_names, int dim);

/// Cosine similarity clipped below at 0, unit diagonal, rows normalized to 1.
Eigen::MatrixXd build_adjacency(const Eigen::MatrixXd& embeddings);

LabelPrior make_label_prior(const std::vector<std::string>& names, const Eigen::MatrixXd& embeddings);

/// out = A * leaky(A * E * W1) * W2, slope 0.2.
Var gcn_forward(Tape& tape, Var embeddings, Var adjacency, Var w1, Var w2);

struct DecoderLayer {
  nn::MultiHeadAttention self_attn;
  nn::MultiHeadAttention cross_attn;
  nn::LayerNorm norm1;
  nn::LayerNorm norm2;
  nn::LayerNorm norm3;
  nn::Linear ff1;
  nn::Linear ff2;

  DecoderLayer() = default;
  DecoderLayer(const std::string& name, Eigen::Index width, int heads, int ff_mult, std::mt19937_64& rng);

  /// queries: C x D; query_pos: C x D; memory, memory_pos: P x D.
  Var operator()(Tape& tape, Var queries, Var query_pos, Var memory, Var memory_pos);
  void collect(nn::ParamList& out);
};

/// Per-class projection over concatenated final queries: p_c = sigmoid(W_c . Q_c + b_c).
struct ClassifierHead {
  ag::Parameter weight;  // C x width
  ag::Parameter bias;    // 1 x C

  ClassifierHead() = default;
  ClassifierHead(const std::string& name, Eigen::Index classes, Eigen::Index width, std::mt19937_64& rng);

  void collect(nn::ParamList& out);
  Eigen::Index width() const { return weight.value.cols(); }
};

/// Final-layer queries of one stage: `reconstructed` from the prototype
/// branch and `original` from the raw-feature branch (either may be unset
/// when a branch is disabled).
struct StageQueries {
  Var reconstructed;
  Var original;
};

/// Concatenates, per class, the queries of every stage as
/// (reconstructed, original) pairs and applies the sigmoid head. Returns the
/// 1 x C probability row.
Var classify(Tape& tape, const std::vector<StageQueries>& stages, ClassifierHead& head);

}  // namespace mccl::pki
