#include "mccl/data.hpp"
#include "mccl/error.hpp"
#include "mccl/metrics.hpp"
#include "support.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace mccl;
using namespace mccl::data;

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << "\n";
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Dataset two_by_two() {
  Dataset ds;
  ds.manifest.num_classes = 2;
  ds.manifest.label_names = {"a", "b"};
  ds.manifest.stage_shapes = {{2, 2, 4}};
  MultiLabelSample s;
  s.sample_id = "only";
  s.labels = {1, 0};
  PatchFeatureMap m;
  m.height = 2;
  m.width = 2;
  m.patches = Eigen::MatrixXd::Constant(4, 4, 0.25);
  m.patches(3, 1) = -1.5;
  s.stages.push_back(m);
  ds.samples.push_back(s);
  ds.manifest.counts = class_counts(ds);
  return ds;
}

}  // namespace

TEST_CASE("class_counts tallies positives") {
  Dataset ds;
  ds.manifest.num_classes = 3;
  for (auto labels : {std::vector<int>{1, 1, 0}, std::vector<int>{0, 1, 0}}) {
    MultiLabelSample s;
    s.labels = labels;
    ds.samples.push_back(s);
  }
  CHECK(class_counts(ds) == std::vector<long>{1, 2, 0});
  ds.samples.clear();
  CHECK(class_counts(ds) == std::vector<long>{0, 0, 0});
}

TEST_CASE("empty record file loads as an empty split") {
  support::TempDir dir("empty");
  Dataset ds;
  ds.manifest.num_classes = 2;
  ds.manifest.label_names = {"a", "b"};
  ds.manifest.stage_shapes = {{1, 1, 3}};
  ds.manifest.counts = {0, 0};
  write_dataset(ds, dir.path());
  const auto loaded = load_dataset(dir.path());
  CHECK(loaded.samples.empty());
  CHECK(loaded.manifest.counts == std::vector<long>{0, 0});
}

TEST_CASE("single sample round-trips through the writer") {
  support::TempDir dir("one");
  const auto ds = two_by_two();
  write_dataset(ds, dir.path());
  const auto loaded = load_dataset(dir.path());
  REQUIRE(loaded.samples.size() == 1);
  CHECK(loaded.samples[0].stages[0].patches.rows() == 4);
  CHECK(loaded.samples[0].stages[0].patches.cols() == 4);
  CHECK(loaded.samples[0].stages[0] == ds.samples[0].stages[0]);
  CHECK(loaded.samples[0].labels == ds.samples[0].labels);
  CHECK(loaded.manifest == ds.manifest);
}

TEST_CASE("generated datasets round-trip bit-exactly") {
  support::TempDir dir("rt");
  auto spec = support::small_spec(5);
  spec.train_samples = 100;
  spec.noise_std = 0.3;
  const auto gen = generate_synthetic(spec);
  write_dataset(gen.train, dir / "a");
  const auto loaded = load_dataset(dir / "a");
  REQUIRE(loaded.samples.size() == 100);
  for (std::size_t i = 0; i < loaded.samples.size(); ++i) {
    CHECK(loaded.samples[i].sample_id == gen.train.samples[i].sample_id);
    CHECK(loaded.samples[i].labels == gen.train.samples[i].labels);
    CHECK(loaded.samples[i].stages == gen.train.samples[i].stages);
  }
  write_dataset(loaded, dir / "b");
  for (const char* f : {"manifest", "records", "features.bin"})
    CHECK(file_bytes(dir / "a" / f) == file_bytes(dir / "b" / f));
}

TEST_CASE("malformed records name the line, shape mismatches name the sample") {
  support::TempDir dir("bad");
  auto spec = support::small_spec(2);
  const auto gen = generate_synthetic(spec);
  write_dataset(gen.train, dir / "ok");

  std::filesystem::copy(dir / "ok", dir / "parse");
  auto lines = read_lines(dir / "parse" / "records");
  lines[2] = "{\"sample_id\": \"x\", \"labels\": [0";
  write_lines(dir / "parse" / "records", lines);
  try {
    load_dataset(dir / "parse");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }

  std::filesystem::copy(dir / "ok", dir / "shape");
  auto manifest = read_lines(dir / "shape" / "manifest");
  for (auto& l : manifest)
    if (l == "stage: 2 2 12") l = "stage: 2 2 10";
  write_lines(dir / "shape" / "manifest", manifest);
  try {
    load_dataset(dir / "shape");
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("train-000000") != std::string::npos);
  }
}

TEST_CASE("generator is deterministic and seed-sensitive") {
  const auto a = generate_synthetic(support::small_spec(9));
  const auto b = generate_synthetic(support::small_spec(9));
  const auto c = generate_synthetic(support::small_spec(10));
  REQUIRE(a.train.samples.size() == b.train.samples.size());
  for (std::size_t i = 0; i < a.train.samples.size(); ++i) {
    CHECK(a.train.samples[i].stages == b.train.samples[i].stages);
    CHECK(a.train.samples[i].labels == b.train.samples[i].labels);
  }
  CHECK_FALSE(a.train.samples[0].stages == c.train.samples[0].stages);
}

TEST_CASE("generator label invariants and class prior") {
  auto spec = support::small_spec(3);
  SUBCASE("exponent 0 gives balanced counts") {
    spec.imbalance_exponent = 0.0;
    const auto gen = generate_synthetic(spec);
    const auto counts = class_counts(gen.train);
    for (long x : counts)
      for (long y : counts) CHECK(std::abs(x - y) <= 1);
  }
  SUBCASE("exponent 1 gives non-increasing counts, recounted independently") {
    spec.imbalance_exponent = 1.0;
    spec.train_samples = 300;
    const auto gen = generate_synthetic(spec);
    std::vector<long> tally(static_cast<std::size_t>(spec.num_classes), 0);
    for (const auto& s : gen.train.samples)
      for (std::size_t c = 0; c < s.labels.size(); ++c) tally[c] += s.labels[c];
    CHECK(tally == gen.train.manifest.counts);
    for (std::size_t c = 1; c < tally.size(); ++c) CHECK(tally[c] <= tally[c - 1]);
    CHECK(tally.front() > tally.back());
  }
  SUBCASE("multi-label samples carry one or two labels") {
    const auto gen = generate_synthetic(spec);
    for (const auto& s : gen.train.samples) {
      const int n = static_cast<int>(s.label_indices().size());
      CHECK((n == 1 || n == 2));
    }
  }
  SUBCASE("multi-class samples carry exactly one label") {
    spec.mode = Mode::MultiClass;
    const auto gen = generate_synthetic(spec);
    for (const auto& s : gen.train.samples) CHECK(s.label_indices().size() == 1);
  }
  SUBCASE("every class has one to three clues, the first one private") {
    const auto gen = generate_synthetic(spec);
    for (int c = 0; c < spec.num_classes; ++c) {
      const auto& cc = gen.dictionary.class_clues[static_cast<std::size_t>(c)];
      CHECK(cc.size() >= 1);
      CHECK(cc.size() <= 3);
      CHECK(cc.front() == c);
    }
  }
}

TEST_CASE("clue-dictionary oracle recovers labels exactly without noise") {
  auto spec = support::small_spec(4);
  spec.noise_std = 0.0;
  spec.min_clues_per_class = spec.max_clues_per_class = 1;
  const auto gen = generate_synthetic(spec);
  const auto pred = support::nearest_clue_labels(gen.test, gen.dictionary);
  metrics::ScoreMatrix scores(static_cast<Eigen::Index>(pred.size()), spec.num_classes);
  metrics::TruthMatrix truth(static_cast<Eigen::Index>(pred.size()), spec.num_classes);
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (int c = 0; c < spec.num_classes; ++c) {
      scores(static_cast<Eigen::Index>(i), c) = pred[i][static_cast<std::size_t>(c)];
      truth(static_cast<Eigen::Index>(i), c) = gen.test.samples[i].labels[static_cast<std::size_t>(c)];
    }
  CHECK(metrics::f1_suite(scores, truth).samples_f1 == 1.0);
}

TEST_CASE("infeasible generator specs are configuration errors") {
  auto spec = support::small_spec();
  spec.stage_shapes = {{1, 1, 4}};
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
  spec = support::small_spec();
  spec.num_clues = 2;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
  spec = support::small_spec();
  spec.num_classes = 1;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
}

TEST_CASE("manifest and sample validation") {
  auto ds = two_by_two();
  CHECK_NOTHROW(validate_sample(ds.manifest, ds.samples[0]));
  auto s = ds.samples[0];
  s.labels = {0, 0};
  CHECK_THROWS_AS(validate_sample(ds.manifest, s), DataError);
  s = ds.samples[0];
  s.stages[0].patches(0, 0) = std::nan("");
  CHECK_THROWS_AS(validate_sample(ds.manifest, s), DataError);
  s = ds.samples[0];
  s.stages[0].patches.conservativeResize(4, 3);
  CHECK_THROWS_AS(validate_sample(ds.manifest, s), ShapeError);
  ds.manifest.mode = Mode::MultiClass;
  s = ds.samples[0];
  s.labels = {1, 1};
  CHECK_THROWS_AS(validate_sample(ds.manifest, s), DataError);
}
