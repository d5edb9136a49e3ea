#include "mccl/model.hpp"

#include "mccl/error.hpp"
#include "mccl/mcc.hpp"

#include <algorithm>

namespace mccl::model {

void Branch::collect(nn::ParamList& out, bool with_layers) {
  if (with_layers) proj.collect(out);
  out.push_back(&memory_pos);
  out.push_back(&query_pos);
  if (with_layers)
    for (auto& l : layers) l.collect(out);
}

Model::Model(const RunConfig& config, const data::DatasetManifest& manifest, const Eigen::MatrixXd& label_embeddings,
             std::uint64_t seed)
    : config_(config), manifest_(manifest), num_classes_(manifest.num_classes), embeddings_(label_embeddings) {
  config_.validate();
  if (embeddings_.rows() != num_classes_)
    throw DataError("label embeddings have " + std::to_string(embeddings_.rows()) + " rows for " +
                    std::to_string(num_classes_) + " classes");
  adjacency_ = pki::build_adjacency(embeddings_);

  std::mt19937_64 rng(seed);
  backbone_ = backbone::Backbone(config_.backbone, manifest.stage_shapes, rng);
  selected_ = backbone::resolve_stages(config_.stages, backbone_.num_stages());
  for (int s : selected_) selected_shapes_.push_back(backbone_.stage_shapes()[static_cast<std::size_t>(s)]);

  const int d = config_.d_model;
  gcn_w1 = ag::Parameter("gcn.w1", nn::xavier(embeddings_.cols(), d, rng));
  gcn_w2 = ag::Parameter("gcn.w2", nn::xavier(d, d, rng));

  for (std::size_t j = 0; j < selected_.size(); ++j) {
    const auto& shape = selected_shapes_[j];
    const std::string stage = "stage" + std::to_string(j);
    original_.push_back(make_branch(stage + ".original", shape.dim, shape.patches(), true, rng));
    if (config_.mcc_enabled) {
      const int len = config_.mcc_memory == "pooled" ? 1 : shape.patches();
      reconstructed_.push_back(
          make_branch(stage + ".reconstructed", shape.dim, len, !config_.share_branches, rng));
    }
  }
  const int per_stage = config_.mcc_enabled ? 2 : 1;
  head_ = pki::ClassifierHead("head", num_classes_,
                              static_cast<Eigen::Index>(per_stage) * static_cast<Eigen::Index>(selected_.size()) * d,
                              rng);
}

Branch Model::make_branch(const std::string& name, int in_dim, int memory_len, bool with_layers,
                          std::mt19937_64& rng) {
  const int d = config_.d_model;
  Branch b;
  if (with_layers) {
    b.proj = nn::Linear(name + ".proj", in_dim, d, rng);
    for (int l = 0; l < config_.decoder_layers; ++l)
      b.layers.emplace_back(name + ".layer" + std::to_string(l), d, config_.heads, config_.ff_mult, rng);
  }
  b.memory_pos = ag::Parameter(name + ".memory_pos", nn::normal(memory_len, d, 0.02, rng));
  b.query_pos = ag::Parameter(name + ".query_pos", nn::normal(num_classes_, d, 0.02, rng));
  return b;
}

Var Model::label_queries(Tape& tape) {
  return pki::gcn_forward(tape, tape.constant(embeddings_), tape.constant(adjacency_), tape.param(gcn_w1),
                          tape.param(gcn_w2));
}

Var Model::run_branch(Tape& tape, Branch& branch, Branch& layers_from, Var memory, Var queries) {
  Var mem = layers_from.proj(tape, memory);
  Var mem_pos = tape.param(branch.memory_pos);
  Var q_pos = tape.param(branch.query_pos);
  Var q = queries;
  for (auto& layer : layers_from.layers) q = layer(tape, q, q_pos, mem, mem_pos);
  return q;
}

Var Model::forward(Tape& tape, Var queries, const data::MultiLabelSample& sample, const cpi::PrototypeBank& bank,
                   std::vector<StageTrace>* trace) {
  const auto features = backbone_.extract(tape, sample);
  std::vector<pki::StageQueries> outs;
  if (trace) trace->clear();
  for (std::size_t j = 0; j < selected_.size(); ++j) {
    Var f = features[static_cast<std::size_t>(selected_[j])];
    pki::StageQueries sq;
    sq.original = run_branch(tape, original_[j], original_[j], f, queries);
    if (config_.mcc_enabled) {
      const auto g = mcc::build_stage_graph(f, bank, static_cast<int>(j), config_.tau);
      Var memory = config_.mcc_memory == "pooled" ? g.pooled : g.normalized;
      Branch& layers = config_.share_branches ? original_[j] : reconstructed_[j];
      sq.reconstructed = run_branch(tape, reconstructed_[j], layers, memory, queries);
      if (trace) trace->push_back({f.value(), g.weights.value()});
    }
    outs.push_back(sq);
  }
  return pki::classify(tape, outs, head_);
}

Eigen::MatrixXd Model::predict(const std::vector<data::MultiLabelSample>& samples, const cpi::PrototypeBank& bank) {
  Eigen::MatrixXd scores(static_cast<Eigen::Index>(samples.size()), num_classes_);
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    Tape tape;
    Var q = label_queries(tape);
    const std::size_t end = std::min(samples.size(), start + kChunk);
    for (std::size_t i = start; i < end; ++i)
      scores.row(static_cast<Eigen::Index>(i)) = forward(tape, q, samples[i], bank).value();
  }
  return scores;
}

cpi::StageFeatures Model::stage_features(const data::Dataset& dataset) {
  cpi::StageFeatures out;
  for (const auto& s : dataset.samples) {
    std::vector<Eigen::MatrixXd> per_stage;
    for (auto& m : backbone_.extract_stages(s, selected_)) per_stage.push_back(std::move(m.patches));
    out.features.push_back(std::move(per_stage));
    out.labels.push_back(s.labels);
  }
  return out;
}

void Model::check_manifest(const data::DatasetManifest& manifest) const {
  if (manifest.num_classes != num_classes_)
    throw DataError("dataset has " + std::to_string(manifest.num_classes) + " classes, model expects " +
                    std::to_string(num_classes_));
  if (manifest.stage_shapes != manifest_.stage_shapes) throw DataError("dataset stage shapes differ from the model's");
}

void Model::check_bank(const cpi::PrototypeBank& bank) const {
  if (!config_.mcc_enabled) return;
  cpi::validate_bank(bank);
  if (bank.num_stages() != static_cast<int>(selected_.size()))
    throw ConfigError("prototype bank has " + std::to_string(bank.num_stages()) + " stages, model selects " +
                      std::to_string(selected_.size()));
  for (std::size_t j = 0; j < selected_.size(); ++j)
    if (bank.prototypes[j].cols() != selected_shapes_[j].dim)
      throw ConfigError("prototype bank stage " + std::to_string(j) + " has width " +
                        std::to_string(bank.prototypes[j].cols()) + ", features have " +
                        std::to_string(selected_shapes_[j].dim));
}

nn::ParamList Model::parameters() {
  nn::ParamList out;
  backbone_.collect(out);
  out.push_back(&gcn_w1);
  out.push_back(&gcn_w2);
  for (auto& b : original_) b.collect(out, true);
  for (auto& b : reconstructed_) b.collect(out, !config_.share_branches);
  head_.collect(out);
  return out;
}

}  // namespace mccl::model
