#pragma once

// Class-specific prototype initialization: the prototype budget is split
// across classes in inverse proportion to their label frequency, then each
// class's patch features are clustered into its share of prototypes.

#include "mccl/data.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mccl::cpi {

struct AllocationPlan {
  std::vector<int> budgets;   // K_c, every entry >= 1
  int total = 0;              // K
  std::vector<double> quotas; // real-valued allocation w_c * K before rounding
};

/// Inverse-frequency allocation with largest-remainder rounding. Zero counts
/// are clamped to 1; a class rounded down to zero takes a seat from the
/// largest-budget class. Throws ConfigError when K < C or all counts are 0.
AllocationPlan allocate_prototypes(const std::vector<long>& counts, int total);

/// Owner class of each prototype, classes laid out in index order.
std::vector<int> owner_vector(const AllocationPlan& plan);

struct KMeansOptions {
  int batch_size = 1024;
  int iters = 100;
  std::uint64_t seed = 0;
};

/// Mini-batch k-means with k-means++ seeding. When batch_size >= N every
/// iteration is a full Lloyd step, so the within-cluster sum of squares is
/// non-increasing. Throws ConfigError when N < k.
Eigen::MatrixXd mini_batch_kmeans(const Eigen::MatrixXd& points, int k, const KMeansOptions& options);

double within_cluster_ss(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids);

struct PrototypeBank {
  std::vector<Eigen::MatrixXd> prototypes;  // per stage: K x D_s
  std::vector<int> owner;                   // class that seeded each prototype
  double epsilon = 1e-8;
  double momentum = 0.99999;
  std::uint64_t version = 0;                // bumped by every momentum update

  int size() const { return static_cast<int>(owner.size()); }
  int num_stages() const { return static_cast<int>(prototypes.size()); }
};

/// Throws ConfigError / DataError when the bank violates its invariants.
void validate_bank(const PrototypeBank& bank);

/// Per-sample, per-stage patch features plus the binary label vectors they
/// belong to. Stage j of every sample must share one width.
struct StageFeatures {
  std::vector<std::vector<Eigen::MatrixXd>> features;  // [sample][stage] P_s x D_s
  std::vector<std::vector<int>> labels;                // [sample] binary, length C
};

/// Pools the patches of every sample positive for class c (multi-label
/// samples contribute to each of their classes) and clusters them into K_c
/// prototypes, per stage. Classes with fewer patches than K_c fall back to
/// sampling patches with replacement and log a warning.
PrototypeBank build_prototype_bank(const StageFeatures& features, const AllocationPlan& plan,
                                   const KMeansOptions& options);

/// Convenience overload that reads the selected dataset stages directly.
PrototypeBank build_prototype_bank(const data::Dataset& dataset, const AllocationPlan& plan,
                                   const std::vector<int>& stages, const KMeansOptions& options);

void save_bank(const PrototypeBank& bank, const std::filesystem::path& path);
PrototypeBank load_bank(const std::filesystem::path& path);

}  // namespace mccl::cpi
