#pragma once

// Multi-stage feature extractor. Passthrough mode hands precomputed stage
// features through untouched; conv mode runs a small stack of strided
// convolutions (kernel == stride) with ReLU over a raw feature grid.

#include "mccl/autograd.hpp"
#include "mccl/data.hpp"
#include "mccl/nn.hpp"

#include <random>
#include <vector>

namespace mccl::backbone {

enum class Mode { Passthrough, Conv };

struct BackboneConfig {
  Mode mode = Mode::Passthrough;
  std::vector<int> widths;       // conv: output width of every stage
  std::vector<int> downsample;   // conv: stride of every stage
};

/// Shape of every stage the backbone emits for inputs of `input` shape(s).
/// Throws ConfigError when the config is inconsistent with the input.
std::vector<data::StageShape> output_shapes(const BackboneConfig& config,
                                            const std::vector<data::StageShape>& input_shapes);

/// Resolves stage indices (negative counts from the deepest stage) against
/// `num_stages`. Throws ConfigError on out-of-range requests.
std::vector<int> resolve_stages(const std::vector<int>& requested, int num_stages);

class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, const std::vector<data::StageShape>& input_shapes, std::mt19937_64& rng);

  const BackboneConfig& config() const { return config_; }
  const std::vector<data::StageShape>& stage_shapes() const { return shapes_; }
  int num_stages() const { return static_cast<int>(shapes_.size()); }

  /// All stages, shallow to deep, as graph nodes.
  std::vector<ag::Var> extract(ag::Tape& tape, const data::MultiLabelSample& sample);
  /// Plain-value version of `extract` restricted to `stages`.
  std::vector<data::PatchFeatureMap> extract_stages(const data::MultiLabelSample& sample,
                                                    const std::vector<int>& stages);

  void collect(nn::ParamList& out);

 private:
  BackboneConfig config_;
  std::vector<data::StageShape> input_shapes_;
  std::vector<data::StageShape> shapes_;
  std::vector<nn::Linear> convs_;
};

}  // namespace mccl::backbone
