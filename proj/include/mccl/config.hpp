#pragma once

#include "mccl/backbone.hpp"
#include "mccl/data.hpp"
#include "mccl/kv.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mccl {

/// Every knob of a run. Defaults follow the published recipe where it gives
/// one; `desk_defaults()` shrinks the model for CPU-scale experiments.
struct RunConfig {
  // prototype initialization
  int k = 2048;
  int kmeans_iters = 100;
  int kmeans_batch = 1024;
  std::string init_bank;  // optional prototype bank file from init-prototypes

  // clustering layer
  double tau = 0.1;
  double lambda = 0.99999;
  double epsilon = 1e-8;
  bool mcc_enabled = true;          // false: reconstructed branch removed
  std::string mcc_memory = "pooled";  // decoder memory of the reconstructed branch: pooled | patches

  // model
  std::vector<int> stages = {-2, -1};
  int d_model = 128;
  int heads = 4;
  int ff_mult = 4;
  int decoder_layers = 2;
  bool share_branches = false;

  // label prior
  std::string embeddings;  // optional label embedding file
  int embed_dim = 256;

  // backbone
  backbone::BackboneConfig backbone;

  // training
  int epochs = 20;
  int batch_size = 32;
  double max_lr = 1e-4;
  double weight_decay = 1e-2;
  double warmup = 0.3;
  double ema_decay = 0.9997;
  double gamma_pos = 0.0;
  double gamma_neg = 2.0;
  std::uint64_t seed = 0;
  double threshold = 0.5;

  static RunConfig desk_defaults();

  /// Applies one `key: value` setting; throws ConfigError on unknown keys or
  /// malformed values.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  std::vector<KeyValue> to_key_values() const;
  static RunConfig from_key_values(const std::vector<KeyValue>& kvs, RunConfig base = desk_defaults());
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Generator spec file: `classes`, `num_clues`, `stages` (HxWxD,...), split
/// sizes, `imbalance_exponent`, `noise_std`, `seed`, `mode`, ...
data::SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);
data::SyntheticSpec parse_synthetic_spec(const std::vector<KeyValue>& kvs);

std::vector<int> parse_int_list(const std::string& text, const std::string& what);

}  // namespace mccl
