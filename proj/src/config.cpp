#include "mccl/config.hpp"

#include "mccl/error.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace mccl {

namespace {

bool parse_bool(const std::string& v, const std::string& what) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(what + ": expected true/false, got '" + v + "'");
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

int to_int(const std::string& v, const std::string& key) { return static_cast<int>(parse_long(v, key)); }

data::StageShape parse_stage_shape(const std::string& text) {
  const auto parts = split(text, 'x');
  if (parts.size() != 3) throw ConfigError("stage shape '" + text + "' must look like HxWxD");
  return {to_int(parts[0], "stage H"), to_int(parts[1], "stage W"), to_int(parts[2], "stage D")};
}

}  // namespace

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  for (const auto& tok : split(text, ',')) {
    if (tok.empty()) continue;
    out.push_back(to_int(tok, what));
  }
  return out;
}

RunConfig RunConfig::desk_defaults() {
  RunConfig c;
  c.k = 256;
  c.d_model = 128;
  return c;
}

void RunConfig::set(const std::string& key, const std::string& v) {
  using Setter = std::function<void(RunConfig&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"cpi.k", [](RunConfig& c, const std::string& s) { c.k = to_int(s, "cpi.k"); }},
      {"cpi.kmeans_iters", [](RunConfig& c, const std::string& s) { c.kmeans_iters = to_int(s, "cpi.kmeans_iters"); }},
      {"cpi.kmeans_batch", [](RunConfig& c, const std::string& s) { c.kmeans_batch = to_int(s, "cpi.kmeans_batch"); }},
      {"cpi.init_bank", [](RunConfig& c, const std::string& s) { c.init_bank = s; }},
      {"mcc.tau", [](RunConfig& c, const std::string& s) { c.tau = parse_double(s, "mcc.tau"); }},
      {"mcc.lambda", [](RunConfig& c, const std::string& s) { c.lambda = parse_double(s, "mcc.lambda"); }},
      {"mcc.epsilon", [](RunConfig& c, const std::string& s) { c.epsilon = parse_double(s, "mcc.epsilon"); }},
      {"mcc.enabled", [](RunConfig& c, const std::string& s) { c.mcc_enabled = parse_bool(s, "mcc.enabled"); }},
      {"mcc.memory", [](RunConfig& c, const std::string& s) { c.mcc_memory = s; }},
      {"model.stages", [](RunConfig& c, const std::string& s) { c.stages = parse_int_list(s, "model.stages"); }},
      {"model.d_model", [](RunConfig& c, const std::string& s) { c.d_model = to_int(s, "model.d_model"); }},
      {"model.heads", [](RunConfig& c, const std::string& s) { c.heads = to_int(s, "model.heads"); }},
      {"model.ff_mult", [](RunConfig& c, const std::string& s) { c.ff_mult = to_int(s, "model.ff_mult"); }},
      {"model.decoder_layers",
       [](RunConfig& c, const std::string& s) { c.decoder_layers = to_int(s, "model.decoder_layers"); }},
      {"model.share_branches",
       [](RunConfig& c, const std::string& s) { c.share_branches = parse_bool(s, "model.share_branches"); }},
      {"pki.embeddings", [](RunConfig& c, const std::string& s) { c.embeddings = s; }},
      {"pki.embed_dim", [](RunConfig& c, const std::string& s) { c.embed_dim = to_int(s, "pki.embed_dim"); }},
      {"backbone.mode",
       [](RunConfig& c, const std::string& s) {
         if (s == "passthrough")
           c.backbone.mode = backbone::Mode::Passthrough;
         else if (s == "conv")
           c.backbone.mode = backbone::Mode::Conv;
         else
           throw ConfigError("backbone.mode must be passthrough or conv");
       }},
      {"backbone.widths",
       [](RunConfig& c, const std::string& s) { c.backbone.widths = parse_int_list(s, "backbone.widths"); }},
      {"backbone.downsample",
       [](RunConfig& c, const std::string& s) { c.backbone.downsample = parse_int_list(s, "backbone.downsample"); }},
      {"train.epochs", [](RunConfig& c, const std::string& s) { c.epochs = to_int(s, "train.epochs"); }},
      {"train.batch_size", [](RunConfig& c, const std::string& s) { c.batch_size = to_int(s, "train.batch_size"); }},
      {"train.max_lr", [](RunConfig& c, const std::string& s) { c.max_lr = parse_double(s, "train.max_lr"); }},
      {"train.weight_decay",
       [](RunConfig& c, const std::string& s) { c.weight_decay = parse_double(s, "train.weight_decay"); }},
      {"train.warmup", [](RunConfig& c, const std::string& s) { c.warmup = parse_double(s, "train.warmup"); }},
      {"train.ema_decay", [](RunConfig& c, const std::string& s) { c.ema_decay = parse_double(s, "train.ema_decay"); }},
      {"train.seed",
       [](RunConfig& c, const std::string& s) { c.seed = static_cast<std::uint64_t>(parse_long(s, "train.seed")); }},
      {"train.threshold", [](RunConfig& c, const std::string& s) { c.threshold = parse_double(s, "train.threshold"); }},
      {"loss.gamma_pos", [](RunConfig& c, const std::string& s) { c.gamma_pos = parse_double(s, "loss.gamma_pos"); }},
      {"loss.gamma_neg", [](RunConfig& c, const std::string& s) { c.gamma_neg = parse_double(s, "loss.gamma_neg"); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(*this, v);
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (k < 1) fail("cpi.k must be positive");
  if (kmeans_iters < 0 || kmeans_batch < 1) fail("cpi.kmeans_* must be positive");
  if (!(tau > 0.0)) fail("mcc.tau must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail("mcc.lambda must lie in [0, 1]");
  if (!(epsilon > 0.0)) fail("mcc.epsilon must be positive");
  if (mcc_memory != "patches" && mcc_memory != "pooled") fail("mcc.memory must be patches or pooled");
  if (stages.empty()) fail("model.stages must not be empty");
  if (d_model < 1 || heads < 1 || d_model % heads != 0) fail("model.d_model must be a positive multiple of model.heads");
  if (ff_mult < 1) fail("model.ff_mult must be positive");
  if (decoder_layers < 1) fail("model.decoder_layers must be >= 1");
  if (embed_dim < 1) fail("pki.embed_dim must be positive");
  if (epochs < 0) fail("train.epochs must be >= 0");
  if (batch_size < 1) fail("train.batch_size must be positive");
  if (!(max_lr > 0.0)) fail("train.max_lr must be positive");
  if (weight_decay < 0.0) fail("train.weight_decay must be >= 0");
  if (!(warmup > 0.0 && warmup < 1.0)) fail("train.warmup must lie in (0, 1)");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) fail("train.ema_decay must lie in [0, 1]");
  if (gamma_pos < 0.0 || gamma_neg < 0.0) fail("loss gammas must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0)) fail("train.threshold must lie in (0, 1)");
}

std::vector<KeyValue> RunConfig::to_key_values() const {
  std::vector<KeyValue> out = {
      {"cpi.k", std::to_string(k)},
      {"cpi.kmeans_iters", std::to_string(kmeans_iters)},
      {"cpi.kmeans_batch", std::to_string(kmeans_batch)},
      {"mcc.tau", format_double(tau)},
      {"mcc.lambda", format_double(lambda)},
      {"mcc.epsilon", format_double(epsilon)},
      {"mcc.enabled", mcc_enabled ? "true" : "false"},
      {"mcc.memory", mcc_memory},
      {"model.stages", join(stages)},
      {"model.d_model", std::to_string(d_model)},
      {"model.heads", std::to_string(heads)},
      {"model.ff_mult", std::to_string(ff_mult)},
      {"model.decoder_layers", std::to_string(decoder_layers)},
      {"model.share_branches", share_branches ? "true" : "false"},
      {"pki.embed_dim", std::to_string(embed_dim)},
      {"backbone.mode", backbone.mode == backbone::Mode::Conv ? "conv" : "passthrough"},
      {"train.epochs", std::to_string(epochs)},
      {"train.batch_size", std::to_string(batch_size)},
      {"train.max_lr", format_double(max_lr)},
      {"train.weight_decay", format_double(weight_decay)},
      {"train.warmup", format_double(warmup)},
      {"train.ema_decay", format_double(ema_decay)},
      {"train.seed", std::to_string(seed)},
      {"train.threshold", format_double(threshold)},
      {"loss.gamma_pos", format_double(gamma_pos)},
      {"loss.gamma_neg", format_double(gamma_neg)},
  };
  if (!init_bank.empty()) out.push_back({"cpi.init_bank", init_bank});
  if (!embeddings.empty()) out.push_back({"pki.embeddings", embeddings});
  if (!backbone.widths.empty()) out.push_back({"backbone.widths", join(backbone.widths)});
  if (!backbone.downsample.empty()) out.push_back({"backbone.downsample", join(backbone.downsample)});
  return out;
}

RunConfig RunConfig::from_key_values(const std::vector<KeyValue>& kvs, RunConfig base) {
  for (const auto& kv : kvs) {
    if (kv.key.rfind("data.", 0) == 0) continue;  // data.* belongs to the CLI
    try {
      base.set(kv.key, kv.value);
    } catch (const ConfigError& e) {
      if (kv.line > 0) throw ConfigError("line " + std::to_string(kv.line) + ": " + e.what());
      throw;
    }
  }
  base.validate();
  return base;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return from_key_values(parse_key_values(in, path.string()));
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& kv : to_key_values()) out << kv.key << ": " << kv.value << "\n";
}

data::SyntheticSpec parse_synthetic_spec(const std::vector<KeyValue>& kvs) {
  data::SyntheticSpec spec;
  for (const auto& kv : kvs) {
    const auto& k = kv.key;
    const auto& v = kv.value;
    try {
      if (k == "classes") spec.num_classes = to_int(v, k);
      else if (k == "num_clues") spec.num_clues = to_int(v, k);
      else if (k == "stages") {
        spec.stage_shapes.clear();
        for (const auto& s : split(v, ',')) spec.stage_shapes.push_back(parse_stage_shape(s));
      } else if (k == "train") spec.train_samples = to_int(v, k);
      else if (k == "val") spec.val_samples = to_int(v, k);
      else if (k == "test") spec.test_samples = to_int(v, k);
      else if (k == "imbalance_exponent") spec.imbalance_exponent = parse_double(v, k);
      else if (k == "noise_std") spec.noise_std = parse_double(v, k);
      else if (k == "seed") spec.seed = static_cast<std::uint64_t>(parse_long(v, k));
      else if (k == "mode") spec.mode = data::parse_mode(v);
      else if (k == "second_label_rate") spec.second_label_rate = parse_double(v, k);
      else if (k == "min_clues") spec.min_clues_per_class = to_int(v, k);
      else if (k == "max_clues") spec.max_clues_per_class = to_int(v, k);
      else if (k == "num_background") spec.num_background = to_int(v, k);
      else if (k == "background_rate") spec.background_rate = parse_double(v, k);
      else throw ConfigError("unknown spec key '" + k + "'");
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(kv.line) + ": " + e.what());
    }
  }
  data::validate_spec(spec);
  return spec;
}

data::SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open spec " + path.string());
  try {
    return parse_synthetic_spec(parse_key_values(in, path.string()));
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace mccl
