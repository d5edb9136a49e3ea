#pragma once

// Full classifier: backbone stages -> (original, reconstructed) decoder
// branches per selected stage, label queries from the GCN, sigmoid head.

#include "mccl/autograd.hpp"
#include "mccl/backbone.hpp"
#include "mccl/config.hpp"
#include "mccl/cpi.hpp"
#include "mccl/data.hpp"
#include "mccl/nn.hpp"
#include "mccl/pki.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace mccl::model {

using ag::Tape;
using ag::Var;

/// One decoder stack reading one memory sequence.
struct Branch {
  nn::Linear proj;           // D_s -> D_model
  ag::Parameter memory_pos;  // M x D_model
  ag::Parameter query_pos;   // C x D_model
  std::vector<pki::DecoderLayer> layers;

  void collect(nn::ParamList& out, bool with_layers);
};

/// What the clustering layer saw for one sample at one selected stage; the
/// trainer stacks these for the momentum update.
struct StageTrace {
  Eigen::MatrixXd patches;
  Eigen::MatrixXd weights;
};

class Model {
 public:
  Model(const RunConfig& config, const data::DatasetManifest& manifest, const Eigen::MatrixXd& label_embeddings,
        std::uint64_t seed);

  /// GCN-refined label embeddings, C x D_model. Computed once per tape.
  Var label_queries(Tape& tape);

  /// 1 x C probabilities for one sample. `trace`, when given, receives one
  /// entry per selected stage (left empty when the clustering layer is off).
  Var forward(Tape& tape, Var queries, const data::MultiLabelSample& sample, const cpi::PrototypeBank& bank,
              std::vector<StageTrace>* trace = nullptr);

  /// Scores of every sample (N x C) with the current parameter values.
  Eigen::MatrixXd predict(const std::vector<data::MultiLabelSample>& samples, const cpi::PrototypeBank& bank);

  /// Backbone features of the selected stages, for prototype initialization.
  cpi::StageFeatures stage_features(const data::Dataset& dataset);

  /// Throws DataError when `manifest` disagrees with the model's shapes.
  void check_manifest(const data::DatasetManifest& manifest) const;
  /// Throws ConfigError when `bank` does not fit the selected stages.
  void check_bank(const cpi::PrototypeBank& bank) const;

  nn::ParamList parameters();
  const std::vector<int>& selected_stages() const { return selected_; }
  const std::vector<data::StageShape>& selected_shapes() const { return selected_shapes_; }
  int num_classes() const { return num_classes_; }
  const Eigen::MatrixXd& label_embeddings() const { return embeddings_; }
  const Eigen::MatrixXd& adjacency() const { return adjacency_; }

 private:
  Branch make_branch(const std::string& name, int in_dim, int memory_len, bool with_layers, std::mt19937_64& rng);
  Var run_branch(Tape& tape, Branch& branch, Branch& layers_from, Var memory, Var queries);

  RunConfig config_;
  data::DatasetManifest manifest_;
  int num_classes_ = 0;
  Eigen::MatrixXd embeddings_;
  Eigen::MatrixXd adjacency_;
  backbone::Backbone backbone_;
  std::vector<int> selected_;
  std::vector<data::StageShape> selected_shapes_;
  ag::Parameter gcn_w1;
  ag::Parameter gcn_w2;
  std::vector<Branch> original_;
  std::vector<Branch> reconstructed_;
  pki::ClassifierHead head_;
};

}  // namespace mccl::model
