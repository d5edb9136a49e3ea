#include "mccl/backbone.hpp"

#include "mccl/error.hpp"

namespace mccl::backbone {

std::vector<data::StageShape> output_shapes(const BackboneConfig& config,
                                            const std::vector<data::StageShape>& input_shapes) {
  if (input_shapes.empty()) throw ConfigError("backbone: input has no stages");
  if (config.mode == Mode::Passthrough) return input_shapes;
  if (input_shapes.size() != 1) throw ConfigError("backbone: conv mode expects a single raw input grid");
  if (config.widths.empty() || config.widths.size() != config.downsample.size())
    throw ConfigError("backbone: conv mode needs one width and one downsample factor per stage");
  std::vector<data::StageShape> out;
  data::StageShape cur = input_shapes.front();
  for (std::size_t s = 0; s < config.widths.size(); ++s) {
    const int f = config.downsample[s];
    if (config.widths[s] < 1 || f < 1) throw ConfigError("backbone: widths and downsample factors must be positive");
    if (cur.height % f != 0 || cur.width % f != 0)
      throw ConfigError("backbone: stage " + std::to_string(s) + " grid " + std::to_string(cur.height) + "x" +
                        std::to_string(cur.width) + " is not divisible by " + std::to_string(f));
    cur = {cur.height / f, cur.width / f, config.widths[s]};
    out.push_back(cur);
  }
  return out;
}

std::vector<int> resolve_stages(const std::vector<int>& requested, int num_stages) {
  if (requested.empty()) throw ConfigError("no stages selected");
  std::vector<int> out;
  for (int s : requested) {
    const int idx = s < 0 ? num_stages + s : s;
    if (idx < 0 || idx >= num_stages)
      throw ConfigError("stage " + std::to_string(s) + " requested but the backbone has " +
                        std::to_string(num_stages) + " stages");
    out.push_back(idx);
  }
  return out;
}

Backbone::Backbone(const BackboneConfig& config, const std::vector<data::StageShape>& input_shapes,
                   std::mt19937_64& rng)
    : config_(config), input_shapes_(input_shapes), shapes_(output_shapes(config, input_shapes)) {
  if (config_.mode == Mode::Conv) {
    int in_dim = input_shapes.front().dim;
    for (std::size_t s = 0; s < shapes_.size(); ++s) {
      const int f = config_.downsample[s];
      convs_.emplace_back("backbone.stage" + std::to_string(s), static_cast<Eigen::Index>(f) * f * in_dim,
                          shapes_[s].dim, rng);
      in_dim = shapes_[s].dim;
    }
  }
}

std::vector<ag::Var> Backbone::extract(ag::Tape& tape, const data::MultiLabelSample& sample) {
  if (sample.stages.size() != input_shapes_.size())
    throw ShapeError(sample.sample_id + ": backbone expects " + std::to_string(input_shapes_.size()) + " input stages");
  std::vector<ag::Var> out;
  if (config_.mode == Mode::Passthrough) {
    for (const auto& st : sample.stages) out.push_back(tape.constant(st.patches));
    return out;
  }
  const auto& raw = sample.stages.front();
  ag::Var cur = tape.constant(raw.patches);
  int h = raw.height, w = raw.width;
  for (std::size_t s = 0; s < convs_.size(); ++s) {
    const int f = config_.downsample[s];
    cur = ag::relu(convs_[s](tape, ag::space_to_depth(cur, h, w, f)));
    h /= f;
    w /= f;
    out.push_back(cur);
  }
  return out;
}

std::vector<data::PatchFeatureMap> Backbone::extract_stages(const data::MultiLabelSample& sample,
                                                            const std::vector<int>& stages) {
  const auto idx = resolve_stages(stages, num_stages());
  ag::Tape tape;
  const auto all = extract(tape, sample);
  std::vector<data::PatchFeatureMap> out;
  for (int s : idx) {
    const auto& shape = shapes_[static_cast<std::size_t>(s)];
    out.push_back({all[static_cast<std::size_t>(s)].value(), shape.height, shape.width});
  }
  return out;
}

void Backbone::collect(nn::ParamList& out) {
  for (auto& c : convs_) c.collect(out);
}

}  // namespace mccl::backbone
