// Checkpoint file layout:
//   "MCCLCKPT 1\n"
//   "<header bytes>\n"
//   JSON header: config, dataset shapes, counters, RNG state, tensor directory
//   raw little-endian float64 payload in directory order

#include "mccl/error.hpp"
#include "mccl/trainer.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mccl::harness {

namespace {

using nlohmann::json;

constexpr const char* kMagic = "MCCLCKPT 1";

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

struct TensorEntry {
  std::string group;
  std::string name;
  const Eigen::MatrixXd* data;
};

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  // row-major on disk
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
}

Eigen::MatrixXd read_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      double v;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      m(r, c) = v;
    }
  if (!in) throw DataError("checkpoint truncated while reading " + what);
  return m;
}

json manifest_json(const data::DatasetManifest& m) {
  json shapes = json::array();
  for (const auto& s : m.stage_shapes) shapes.push_back({s.height, s.width, s.dim});
  return {{"num_classes", m.num_classes}, {"labels", m.label_names}, {"stages", shapes},
          {"mode", data::to_string(m.mode)}, {"counts", m.counts}};
}

data::DatasetManifest manifest_from_json(const json& j) {
  data::DatasetManifest m;
  m.num_classes = j.at("num_classes").get<int>();
  m.label_names = j.at("labels").get<std::vector<std::string>>();
  for (const auto& s : j.at("stages")) m.stage_shapes.push_back({s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()});
  m.mode = data::parse_mode(j.at("mode").get<std::string>());
  m.counts = j.at("counts").get<std::vector<long>>();
  return m;
}

}  // namespace

void Trainer::save(const std::filesystem::path& path) {
  const auto params = model_.parameters();
  const auto& embeddings = model_.label_embeddings();
  std::vector<TensorEntry> tensors;
  tensors.push_back({"label_embeddings", "label_embeddings", &embeddings});
  for (const auto* p : params) tensors.push_back({"param", p->name, &p->value});
  for (std::size_t i = 0; i < params.size(); ++i) tensors.push_back({"ema", params[i]->name, &ema_.shadow()[i]});
  const auto& adam = adam_.state();
  for (std::size_t i = 0; i < adam.m.size(); ++i) tensors.push_back({"adam_m", params[i]->name, &adam.m[i]});
  for (std::size_t i = 0; i < adam.v.size(); ++i) tensors.push_back({"adam_v", params[i]->name, &adam.v[i]});
  for (std::size_t j = 0; j < bank_.prototypes.size(); ++j)
    tensors.push_back({"bank", "stage" + std::to_string(j), &bank_.prototypes[j]});

  json config = json::array();
  for (const auto& kv : config_.to_key_values()) config.push_back({kv.key, kv.value});
  json directory = json::array();
  for (const auto& t : tensors)
    directory.push_back({{"group", t.group}, {"name", t.name}, {"rows", t.data->rows()}, {"cols", t.data->cols()}});
  std::ostringstream rng;
  rng << rng_;

  json header = {{"config", config},
                 {"dataset", manifest_json(manifest_)},
                 {"steps_per_epoch", steps_per_epoch_},
                 {"step", step_},
                 {"epoch", epoch_},
                 {"adam_step", adam.step},
                 {"rng", rng.str()},
                 {"bank", {{"owner", bank_.owner}, {"version", bank_.version}}},
                 {"tensors", directory}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << kMagic << "\n" << text.size() << "\n" << text;
  for (const auto& t : tensors) write_matrix(out, *t.data);
  if (!out) throw DataError("write failed: " + path.string());
}

Trainer Trainer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string magic, size_line;
  std::getline(in, magic);
  if (magic != kMagic) throw DataError(path.string() + ": not a checkpoint");
  std::getline(in, size_line);
  std::size_t size = 0;
  try {
    size = std::stoul(size_line);
  } catch (const std::exception&) {
    throw DataError(path.string() + ": bad header length");
  }
  std::string text(size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(size));
  if (!in) throw DataError(path.string() + ": truncated header");

  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": corrupt header: " + e.what());
  }

  try {
    std::vector<KeyValue> kvs;
    for (const auto& kv : header.at("config")) kvs.push_back({kv.at(0).get<std::string>(), kv.at(1).get<std::string>(), 0});
    RunConfig config = RunConfig::from_key_values(kvs);
    auto manifest = manifest_from_json(header.at("dataset"));

    struct Loaded {
      std::string group, name;
      Eigen::MatrixXd value;
    };
    std::vector<Loaded> loaded;
    for (const auto& t : header.at("tensors")) {
      const auto group = t.at("group").get<std::string>();
      const auto name = t.at("name").get<std::string>();
      loaded.push_back({group, name, read_matrix(in, t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>(),
                                                 group + "/" + name)});
    }
    std::size_t at = 0;
    auto take = [&](const std::string& group) -> Loaded* {
      if (at < loaded.size() && loaded[at].group == group) return &loaded[at++];
      return nullptr;
    };

    Loaded* emb = take("label_embeddings");
    if (!emb) throw DataError("checkpoint lacks label embeddings");
    Trainer trainer(config, manifest, emb->value, header.at("steps_per_epoch").get<long>());
    const auto params = trainer.model_.parameters();

    auto fill = [&](const std::string& group, auto&& assign) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        Loaded* t = take(group);
        if (!t || t->name != params[i]->name || t->value.rows() != params[i]->value.rows() ||
            t->value.cols() != params[i]->value.cols())
          throw DataError("checkpoint " + group + " tensors do not match the model (at " + params[i]->name + ")");
        assign(i, std::move(t->value));
      }
    };
    fill("param", [&](std::size_t i, Eigen::MatrixXd v) { params[i]->value = std::move(v); });
    std::vector<Eigen::MatrixXd> shadow(params.size());
    fill("ema", [&](std::size_t i, Eigen::MatrixXd v) { shadow[i] = std::move(v); });
    trainer.ema_.set_shadow(std::move(shadow));

    optim::AdamW::State adam;
    adam.step = header.at("adam_step").get<long>();
    if (at < loaded.size() && loaded[at].group == "adam_m") {
      adam.m.resize(params.size());
      adam.v.resize(params.size());
      fill("adam_m", [&](std::size_t i, Eigen::MatrixXd v) { adam.m[i] = std::move(v); });
      fill("adam_v", [&](std::size_t i, Eigen::MatrixXd v) { adam.v[i] = std::move(v); });
    }
    trainer.adam_.set_state(std::move(adam));

    while (Loaded* t = take("bank")) trainer.bank_.prototypes.push_back(std::move(t->value));
    if (at != loaded.size()) throw DataError("checkpoint has unexpected tensor group " + loaded[at].group);
    trainer.bank_.owner = header.at("bank").at("owner").get<std::vector<int>>();
    trainer.bank_.version = header.at("bank").at("version").get<std::uint64_t>();
    trainer.bank_.momentum = config.lambda;
    trainer.bank_.epsilon = config.epsilon;
    trainer.model_.check_bank(trainer.bank_);

    trainer.step_ = header.at("step").get<long>();
    trainer.epoch_ = header.at("epoch").get<int>();
    std::istringstream rng(header.at("rng").get<std::string>());
    rng >> trainer.rng_;
    if (!rng) throw DataError("checkpoint RNG state is corrupt");
    return trainer;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed header: " + e.what());
  }
}

}  // namespace mccl::harness
