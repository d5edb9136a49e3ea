#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace mccl::data {

enum class Mode { MultiLabel, MultiClass };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);

struct StageShape {
  int height = 0;
  int width = 0;
  int dim = 0;

  int patches() const { return height * width; }
  bool operator==(const StageShape&) const = default;
};

/// One stage's grid of patch embeddings, rows in row-major grid order.
struct PatchFeatureMap {
  Eigen::MatrixXd patches;  // (height*width) x dim
  int height = 0;
  int width = 0;

  bool operator==(const PatchFeatureMap&) const = default;
};

struct MultiLabelSample {
  std::string sample_id;
  std::vector<PatchFeatureMap> stages;  // shallow -> deep
  std::vector<int> labels;              // binary, length C

  std::vector<int> label_indices() const;
};

struct DatasetManifest {
  int num_classes = 0;
  std::vector<std::string> label_names;
  std::vector<StageShape> stage_shapes;
  Mode mode = Mode::MultiLabel;
  std::vector<long> counts;

  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<MultiLabelSample> samples;
};

/// Throws ShapeError / DataError when `sample` violates the manifest.
void validate_sample(const DatasetManifest& manifest, const MultiLabelSample& sample);

std::vector<long> class_counts(const Dataset& dataset);

// ---- on-disk format ---------------------------------------------------------
//
//   DIR/manifest     key: value lines (version, mode, num_classes, label, stage, counts)
//   DIR/records      one JSON object per line: sample_id, labels, offsets
//   DIR/features.bin little-endian float32; offsets are byte offsets per stage
//
// Features are stored as float32, so values that are exactly representable
// as floats survive a write/load cycle bit-for-bit.

DatasetManifest read_manifest(const std::filesystem::path& dir);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir);

/// Streams samples from a dataset directory one record at a time.
class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& dir);

  const DatasetManifest& manifest() const { return manifest_; }
  /// Next sample, or nullopt at end of file. Parse errors name the line.
  std::optional<MultiLabelSample> next();

 private:
  std::filesystem::path records_path_;
  DatasetManifest manifest_;
  std::ifstream records_;
  std::ifstream features_;
  std::uintmax_t features_size_ = 0;
  std::size_t line_no_ = 0;
};

/// Loads a whole split and checks that manifest counts match the records.
Dataset load_dataset(const std::filesystem::path& dir);
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// `dir` itself when it holds a manifest, otherwise `dir/split`.
std::filesystem::path resolve_split(const std::filesystem::path& dir, const std::string& split);

// ---- synthetic compositional-clue data ---------------------------------------

struct SyntheticSpec {
  int num_classes = 6;
  int num_clues = 12;
  std::vector<StageShape> stage_shapes = {{4, 4, 16}, {3, 3, 24}};
  int train_samples = 600;
  int val_samples = 200;
  int test_samples = 200;
  double imbalance_exponent = 1.0;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  Mode mode = Mode::MultiLabel;
  int max_labels = 2;             // multi-label mode only
  double second_label_rate = 0.3; // fraction of samples carrying a second label
  int min_clues_per_class = 1;
  int max_clues_per_class = 3;
  int num_background = 12;        // distractor dictionary size
  double background_rate = 1.0;   // free patches: background vs. repeated clue
};

/// Ground truth of the generator: which clue vectors make up each class.
struct ClueDictionary {
  std::vector<Eigen::MatrixXd> clues;       // per stage: num_clues x D_s
  std::vector<Eigen::MatrixXd> background;  // per stage: num_background x D_s
  std::vector<std::vector<int>> class_clues;  // class -> clue indices; first is private
};

struct SyntheticData {
  Dataset train;
  Dataset val;
  Dataset test;
  ClueDictionary dictionary;
};

/// Throws ConfigError on infeasible specs.
void validate_spec(const SyntheticSpec& spec);
SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Power-law class prior (c+1)^-exponent, normalized.
std::vector<double> class_prior(int num_classes, double exponent);

std::vector<std::string> default_label_names(int num_classes);

}  // namespace mccl::data
