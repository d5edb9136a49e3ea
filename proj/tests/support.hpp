#pragma once

#include "mccl/data.hpp"

#include <filesystem>
#include <limits>
#include <random>
#include <string>

namespace support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("mccl-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

/// Small synthetic task for fast tests.
inline mccl::data::SyntheticSpec small_spec(std::uint64_t seed = 1) {
  mccl::data::SyntheticSpec spec;
  spec.num_classes = 4;
  spec.num_clues = 8;
  spec.stage_shapes = {{3, 3, 8}, {2, 2, 12}};
  spec.train_samples = 60;
  spec.val_samples = 20;
  spec.test_samples = 20;
  spec.num_background = 6;
  spec.max_clues_per_class = 2;
  spec.seed = seed;
  return spec;
}

/// Predicts class c whenever a patch's nearest dictionary entry (clues and
/// background, any stage) is the private clue of c.
inline std::vector<std::vector<int>> nearest_clue_labels(const mccl::data::Dataset& ds,
                                                         const mccl::data::ClueDictionary& dict) {
  std::vector<std::vector<int>> out;
  for (const auto& s : ds.samples) {
    std::vector<int> pred(static_cast<std::size_t>(ds.manifest.num_classes), 0);
    for (std::size_t st = 0; st < s.stages.size(); ++st) {
      const auto& clues = dict.clues[st];
      const auto& bg = dict.background[st];
      for (Eigen::Index i = 0; i < s.stages[st].patches.rows(); ++i) {
        const auto row = s.stages[st].patches.row(i);
        double best = std::numeric_limits<double>::infinity();
        int best_clue = -1;
        for (Eigen::Index k = 0; k < clues.rows(); ++k) {
          const double d = (clues.row(k) - row).squaredNorm();
          if (d < best) best = d, best_clue = static_cast<int>(k);
        }
        for (Eigen::Index k = 0; k < bg.rows(); ++k) {
          const double d = (bg.row(k) - row).squaredNorm();
          if (d < best) best = d, best_clue = -1;
        }
        if (best_clue >= 0 && best_clue < ds.manifest.num_classes) pred[static_cast<std::size_t>(best_clue)] = 1;
      }
    }
    out.push_back(pred);
  }
  return out;
}

}  // namespace support
