#include "mccl/data.hpp"

#include "mccl/apportion.hpp"
#include "mccl/error.hpp"
#include "mccl/kv.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace mccl::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "features.bin is little-endian float32");

std::string to_string(Mode mode) { return mode == Mode::MultiLabel ? "multi-label" : "multi-class"; }

Mode parse_mode(const std::string& text) {
  if (text == "multi-label") return Mode::MultiLabel;
  if (text == "multi-class") return Mode::MultiClass;
  throw ConfigError("unknown mode '" + text + "' (expected multi-label or multi-class)");
}

std::vector<int> MultiLabelSample::label_indices() const {
  std::vector<int> out;
  for (std::size_t c = 0; c < labels.size(); ++c)
    if (labels[c] != 0) out.push_back(static_cast<int>(c));
  return out;
}

void validate_sample(const DatasetManifest& manifest, const MultiLabelSample& sample) {
  const auto& id = sample.sample_id;
  if (sample.labels.size() != static_cast<std::size_t>(manifest.num_classes))
    throw ShapeError(id + ": label vector has length " + std::to_string(sample.labels.size()) + ", expected " +
                     std::to_string(manifest.num_classes));
  int positives = 0;
  for (int y : sample.labels) {
    if (y != 0 && y != 1) throw DataError(id + ": labels must be binary");
    positives += y;
  }
  if (positives < 1) throw DataError(id + ": sample has no positive label");
  if (manifest.mode == Mode::MultiClass && positives != 1)
    throw DataError(id + ": multi-class sample must have exactly one label");
  if (sample.stages.size() != manifest.stage_shapes.size())
    throw ShapeError(id + ": has " + std::to_string(sample.stages.size()) + " stages, manifest declares " +
                     std::to_string(manifest.stage_shapes.size()));
  for (std::size_t s = 0; s < sample.stages.size(); ++s) {
    const auto& st = sample.stages[s];
    const auto& shape = manifest.stage_shapes[s];
    if (st.height != shape.height || st.width != shape.width || st.patches.rows() != shape.patches() ||
        st.patches.cols() != shape.dim)
      throw ShapeError(id + ": stage " + std::to_string(s) + " shape does not match manifest");
    if (!st.patches.allFinite()) throw DataError(id + ": non-finite feature at stage " + std::to_string(s));
  }
}

std::vector<long> class_counts(const Dataset& dataset) {
  std::vector<long> counts(static_cast<std::size_t>(dataset.manifest.num_classes), 0);
  for (const auto& s : dataset.samples)
    for (std::size_t c = 0; c < s.labels.size() && c < counts.size(); ++c) counts[c] += s.labels[c] != 0 ? 1 : 0;
  return counts;
}

// ---- manifest ---------------------------------------------------------------

DatasetManifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest";
  DatasetManifest m;
  bool have_classes = false;
  bool have_counts = false;
  for (const auto& kv : read_key_values(path)) {
    try {
      if (kv.key == "version") {
        if (kv.value != "1") throw ParseError(path.string(), kv.line, "unsupported version " + kv.value);
      } else if (kv.key == "mode") {
        m.mode = parse_mode(kv.value);
      } else if (kv.key == "num_classes") {
        m.num_classes = static_cast<int>(parse_long(kv.value, "num_classes"));
        have_classes = true;
      } else if (kv.key == "label") {
        m.label_names.push_back(kv.value);
      } else if (kv.key == "stage") {
        const auto parts = split_whitespace(kv.value);
        if (parts.size() != 3) throw ParseError(path.string(), kv.line, "stage needs 'H W D'");
        m.stage_shapes.push_back({static_cast<int>(parse_long(parts[0], "stage H")),
                                  static_cast<int>(parse_long(parts[1], "stage W")),
                                  static_cast<int>(parse_long(parts[2], "stage D"))});
      } else if (kv.key == "counts") {
        for (const auto& tok : split_whitespace(kv.value)) m.counts.push_back(parse_long(tok, "counts"));
        have_counts = true;
      } else {
        throw ParseError(path.string(), kv.line, "unknown manifest key '" + kv.key + "'");
      }
    } catch (const ConfigError& e) {
      throw ParseError(path.string(), kv.line, e.what());
    }
  }
  if (!have_classes || m.num_classes < 1) throw DataError(path.string() + ": missing or invalid num_classes");
  if (m.label_names.size() != static_cast<std::size_t>(m.num_classes))
    throw DataError(path.string() + ": expected " + std::to_string(m.num_classes) + " label lines");
  if (m.stage_shapes.empty()) throw DataError(path.string() + ": no stage shapes");
  for (const auto& s : m.stage_shapes)
    if (s.height < 1 || s.width < 1 || s.dim < 1) throw DataError(path.string() + ": stage dimensions must be positive");
  if (!have_counts) m.counts.assign(static_cast<std::size_t>(m.num_classes), 0);
  if (m.counts.size() != static_cast<std::size_t>(m.num_classes))
    throw DataError(path.string() + ": counts length differs from num_classes");
  return m;
}

void write_manifest(const DatasetManifest& m, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest", std::ios::binary);
  if (!out) throw DataError("cannot write " + (dir / "manifest").string());
  out << "version: 1\n";
  out << "mode: " << to_string(m.mode) << "\n";
  out << "num_classes: " << m.num_classes << "\n";
  for (const auto& name : m.label_names) out << "label: " << name << "\n";
  for (const auto& s : m.stage_shapes) out << "stage: " << s.height << " " << s.width << " " << s.dim << "\n";
  out << "counts:";
  for (long c : m.counts) out << " " << c;
  out << "\n";
}

// ---- records ----------------------------------------------------------------

DatasetReader::DatasetReader(const fs::path& dir)
    : records_path_(dir / "records"), manifest_(read_manifest(dir)) {
  records_.open(records_path_, std::ios::binary);
  if (!records_) throw DataError("cannot open " + records_path_.string());
  const fs::path features_path = dir / "features.bin";
  features_.open(features_path, std::ios::binary);
  if (!features_) throw DataError("cannot open " + features_path.string());
  features_size_ = fs::file_size(features_path);
}

std::optional<MultiLabelSample> DatasetReader::next() {
  std::string line;
  while (std::getline(records_, line)) {
    ++line_no_;
    if (trim(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(records_path_.string(), line_no_, e.what());
    }
    MultiLabelSample sample;
    std::vector<std::int64_t> offsets;
    std::vector<std::array<int, 3>> shapes;
    std::vector<int> indices;
    try {
      sample.sample_id = rec.at("sample_id").get<std::string>();
      indices = rec.at("labels").get<std::vector<int>>();
      offsets = rec.at("offsets").get<std::vector<std::int64_t>>();
      shapes = rec.at("shapes").get<std::vector<std::array<int, 3>>>();
    } catch (const json::exception& e) {
      throw ParseError(records_path_.string(), line_no_, e.what());
    }
    const auto& id = sample.sample_id;
    sample.labels.assign(static_cast<std::size_t>(manifest_.num_classes), 0);
    for (int c : indices) {
      if (c < 0 || c >= manifest_.num_classes)
        throw ParseError(records_path_.string(), line_no_, id + ": label index " + std::to_string(c) + " out of range");
      if (sample.labels[static_cast<std::size_t>(c)] != 0)
        throw ParseError(records_path_.string(), line_no_, id + ": duplicate label index");
      sample.labels[static_cast<std::size_t>(c)] = 1;
    }
    if (offsets.size() != manifest_.stage_shapes.size() || shapes.size() != manifest_.stage_shapes.size())
      throw ShapeError(id + ": record has " + std::to_string(shapes.size()) + " stages, manifest declares " +
                       std::to_string(manifest_.stage_shapes.size()));
    for (std::size_t s = 0; s < shapes.size(); ++s) {
      const StageShape declared = manifest_.stage_shapes[s];
      const StageShape got{shapes[s][0], shapes[s][1], shapes[s][2]};
      if (!(got == declared))
        throw ShapeError(id + ": stage " + std::to_string(s) + " is " + std::to_string(got.height) + "x" +
                         std::to_string(got.width) + "x" + std::to_string(got.dim) + ", manifest declares " +
                         std::to_string(declared.height) + "x" + std::to_string(declared.width) + "x" +
                         std::to_string(declared.dim));
      const std::int64_t count = static_cast<std::int64_t>(got.patches()) * got.dim;
      const std::int64_t bytes = count * static_cast<std::int64_t>(sizeof(float));
      if (offsets[s] < 0 || static_cast<std::uintmax_t>(offsets[s] + bytes) > features_size_)
        throw ShapeError(id + ": stage " + std::to_string(s) + " offset outside features.bin");
      std::vector<float> buf(static_cast<std::size_t>(count));
      features_.seekg(offsets[s]);
      features_.read(reinterpret_cast<char*>(buf.data()), bytes);
      if (!features_) throw DataError(id + ": short read from features.bin");
      PatchFeatureMap map;
      map.height = got.height;
      map.width = got.width;
      map.patches.resize(got.patches(), got.dim);
      for (int p = 0; p < got.patches(); ++p)
        for (int d = 0; d < got.dim; ++d)
          map.patches(p, d) = static_cast<double>(buf[static_cast<std::size_t>(p) * got.dim + d]);
      sample.stages.push_back(std::move(map));
    }
    validate_sample(manifest_, sample);
    return sample;
  }
  return std::nullopt;
}

Dataset load_dataset(const fs::path& dir) {
  DatasetReader reader(dir);
  Dataset ds;
  ds.manifest = reader.manifest();
  while (auto s = reader.next()) ds.samples.push_back(std::move(*s));
  const auto counts = class_counts(ds);
  if (counts != ds.manifest.counts)
    throw DataError((dir / "manifest").string() + ": counts do not match the records");
  return ds;
}

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& s : dataset.samples) validate_sample(dataset.manifest, s);
  DatasetManifest manifest = dataset.manifest;
  manifest.counts = class_counts(dataset);
  write_manifest(manifest, dir);

  std::ofstream records(dir / "records", std::ios::binary);
  std::ofstream features(dir / "features.bin", std::ios::binary);
  if (!records || !features) throw DataError("cannot write dataset files in " + dir.string());
  std::int64_t offset = 0;
  std::vector<float> buf;
  for (const auto& s : dataset.samples) {
    json rec;
    rec["sample_id"] = s.sample_id;
    rec["labels"] = s.label_indices();
    std::vector<std::int64_t> offsets;
    std::vector<std::array<int, 3>> shapes;
    for (const auto& st : s.stages) {
      offsets.push_back(offset);
      shapes.push_back({st.height, st.width, static_cast<int>(st.patches.cols())});
      buf.resize(static_cast<std::size_t>(st.patches.size()));
      for (Eigen::Index p = 0; p < st.patches.rows(); ++p)
        for (Eigen::Index d = 0; d < st.patches.cols(); ++d)
          buf[static_cast<std::size_t>(p * st.patches.cols() + d)] = static_cast<float>(st.patches(p, d));
      const auto bytes = static_cast<std::streamsize>(buf.size() * sizeof(float));
      features.write(reinterpret_cast<const char*>(buf.data()), bytes);
      offset += bytes;
    }
    rec["offsets"] = offsets;
    rec["shapes"] = shapes;
    records << rec.dump() << "\n";
  }
  if (!records || !features) throw DataError("write failed in " + dir.string());
}

fs::path resolve_split(const fs::path& dir, const std::string& split) {
  if (fs::exists(dir / "manifest")) return dir;
  return dir / split;
}

// ---- synthetic generator ------------------------------------------------------

std::vector<double> class_prior(int num_classes, double exponent) {
  std::vector<double> prior(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) prior[static_cast<std::size_t>(c)] = std::pow(c + 1.0, -exponent);
  const double total = std::accumulate(prior.begin(), prior.end(), 0.0);
  for (auto& p : prior) p /= total;
  return prior;
}

std::vector<std::string> default_label_names(int num_classes) {
  std::vector<std::string> names;
  for (int c = 0; c < num_classes; ++c) names.push_back("class_" + std::to_string(c));
  return names;
}

namespace {

bool has_second_label(const SyntheticSpec& spec) {
  return spec.mode == Mode::MultiLabel && spec.second_label_rate > 0.0;
}

double to_float(double x) { return static_cast<double>(static_cast<float>(x)); }

Eigen::MatrixXd gaussian_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = to_float(normal(rng));
  return m;
}

/// Label sets for one split. The label multiset follows the class prior
/// exactly (largest remainder), so class counts are reproducible by design.
std::vector<std::vector<int>> draw_label_sets(const SyntheticSpec& spec, int n, std::mt19937_64& rng) {
  if (n == 0) return {};
  const long seconds = has_second_label(spec) ? std::lround(spec.second_label_rate * n) : 0;
  const long total = n + seconds;
  const auto prior = class_prior(spec.num_classes, spec.imbalance_exponent);
  std::vector<double> quotas;
  for (double p : prior) quotas.push_back(p * static_cast<double>(total));
  const auto counts = largest_remainder(quotas, total);
  std::vector<int> slots;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > n)
      throw ConfigError("class " + std::to_string(c) + " needs " + std::to_string(counts[c]) +
                        " positives but the split has only " + std::to_string(n) + " samples");
    slots.insert(slots.end(), static_cast<std::size_t>(counts[c]), static_cast<int>(c));
  }
  // Sorted slots: slot i and slot i+n never share a label because no label
  // occupies more than n consecutive slots.
  std::vector<std::vector<int>> sets(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    sets[static_cast<std::size_t>(i)].push_back(slots[static_cast<std::size_t>(i)]);
    if (i < seconds) sets[static_cast<std::size_t>(i)].push_back(slots[static_cast<std::size_t>(i + n)]);
  }
  std::shuffle(sets.begin(), sets.end(), rng);
  return sets;
}

Dataset generate_split(const SyntheticSpec& spec, const ClueDictionary& dict, const std::string& name, int n,
                       std::mt19937_64& rng) {
  Dataset ds;
  ds.manifest.num_classes = spec.num_classes;
  ds.manifest.label_names = default_label_names(spec.num_classes);
  ds.manifest.stage_shapes = spec.stage_shapes;
  ds.manifest.mode = spec.mode;

  const auto label_sets = draw_label_sets(spec, n, rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    MultiLabelSample sample;
    std::ostringstream id;
    id << name << "-" << std::setw(6) << std::setfill('0') << i;
    sample.sample_id = id.str();
    sample.labels.assign(static_cast<std::size_t>(spec.num_classes), 0);
    std::set<int> clue_set;
    for (int c : label_sets[static_cast<std::size_t>(i)]) {
      sample.labels[static_cast<std::size_t>(c)] = 1;
      const auto& cc = dict.class_clues[static_cast<std::size_t>(c)];
      clue_set.insert(cc.begin(), cc.end());
    }
    const std::vector<int> clues(clue_set.begin(), clue_set.end());
    for (std::size_t s = 0; s < spec.stage_shapes.size(); ++s) {
      const auto shape = spec.stage_shapes[s];
      std::vector<int> positions(static_cast<std::size_t>(shape.patches()));
      std::iota(positions.begin(), positions.end(), 0);
      std::shuffle(positions.begin(), positions.end(), rng);
      PatchFeatureMap map;
      map.height = shape.height;
      map.width = shape.width;
      map.patches.resize(shape.patches(), shape.dim);
      for (std::size_t j = 0; j < positions.size(); ++j) {
        Eigen::RowVectorXd base;
        if (j < clues.size()) {
          base = dict.clues[s].row(clues[j]);
        } else if (unit(rng) < spec.background_rate) {
          std::uniform_int_distribution<int> pick(0, spec.num_background - 1);
          base = dict.background[s].row(pick(rng));
        } else {
          std::uniform_int_distribution<std::size_t> pick(0, clues.size() - 1);
          base = dict.clues[s].row(clues[pick(rng)]);
        }
        for (Eigen::Index d = 0; d < base.size(); ++d)
          map.patches(positions[j], d) = to_float(base(d) + spec.noise_std * noise(rng));
      }
      sample.stages.push_back(std::move(map));
    }
    ds.samples.push_back(std::move(sample));
  }
  ds.manifest.counts = class_counts(ds);
  return ds;
}

}  // namespace

void validate_spec(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("synthetic spec: need at least 2 classes");
  if (spec.num_clues < spec.num_classes) throw ConfigError("synthetic spec: num_clues must be >= num_classes");
  if (spec.stage_shapes.empty()) throw ConfigError("synthetic spec: no stages");
  for (const auto& s : spec.stage_shapes)
    if (s.height < 1 || s.width < 1 || s.dim < 1) throw ConfigError("synthetic spec: stage dimensions must be positive");
  if (spec.min_clues_per_class < 1 || spec.max_clues_per_class > 3 ||
      spec.min_clues_per_class > spec.max_clues_per_class)
    throw ConfigError("synthetic spec: clues per class must satisfy 1 <= min <= max <= 3");
  if (spec.min_clues_per_class - 1 > spec.num_clues - spec.num_classes)
    throw ConfigError("synthetic spec: not enough shared clues for min_clues_per_class");
  if (spec.train_samples < 0 || spec.val_samples < 0 || spec.test_samples < 0)
    throw ConfigError("synthetic spec: negative split size");
  if (spec.noise_std < 0.0) throw ConfigError("synthetic spec: noise_std must be >= 0");
  if (spec.second_label_rate < 0.0 || spec.second_label_rate > 1.0)
    throw ConfigError("synthetic spec: second_label_rate must lie in [0, 1]");
  if (spec.background_rate < 0.0 || spec.background_rate > 1.0)
    throw ConfigError("synthetic spec: background_rate must lie in [0, 1]");
  if (spec.num_background < 1) throw ConfigError("synthetic spec: num_background must be >= 1");
  const int labels = has_second_label(spec) ? 2 : 1;
  int min_patches = spec.stage_shapes.front().patches();
  for (const auto& s : spec.stage_shapes) min_patches = std::min(min_patches, s.patches());
  if (labels * spec.max_clues_per_class > min_patches)
    throw ConfigError("synthetic spec: up to " + std::to_string(labels * spec.max_clues_per_class) +
                      " clues per sample but the smallest stage has only " + std::to_string(min_patches) +
                      " patches");
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  validate_spec(spec);
  SyntheticData out;
  std::mt19937_64 rng(spec.seed);
  auto& dict = out.dictionary;
  for (const auto& s : spec.stage_shapes) {
    dict.clues.push_back(gaussian_matrix(rng, spec.num_clues, s.dim));
    dict.background.push_back(gaussian_matrix(rng, spec.num_background, s.dim));
  }
  std::vector<int> shared(static_cast<std::size_t>(spec.num_clues - spec.num_classes));
  std::iota(shared.begin(), shared.end(), spec.num_classes);
  const int max_extra = std::min(spec.max_clues_per_class - 1, static_cast<int>(shared.size()));
  const int min_extra = std::min(spec.min_clues_per_class - 1, max_extra);
  for (int c = 0; c < spec.num_classes; ++c) {
    std::uniform_int_distribution<int> extra(min_extra, max_extra);
    const int k = extra(rng);
    std::shuffle(shared.begin(), shared.end(), rng);
    std::vector<int> clues{c};
    clues.insert(clues.end(), shared.begin(), shared.begin() + k);
    dict.class_clues.push_back(std::move(clues));
  }
  const std::uint64_t golden = 0x9E3779B97F4A7C15ULL;
  std::mt19937_64 train_rng(spec.seed ^ (golden * 1));
  std::mt19937_64 val_rng(spec.seed ^ (golden * 2));
  std::mt19937_64 test_rng(spec.seed ^ (golden * 3));
  out.train = generate_split(spec, dict, "train", spec.train_samples, train_rng);
  out.val = generate_split(spec, dict, "val", spec.val_samples, val_rng);
  out.test = generate_split(spec, dict, "test", spec.test_samples, test_rng);
  return out;
}

}  // namespace mccl::data
