#include "mccl/cpi.hpp"

#include "mccl/apportion.hpp"
#include "mccl/error.hpp"
#include "mccl/kv.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace mccl::cpi {

AllocationPlan allocate_prototypes(const std::vector<long>& counts, int total) {
  const int classes = static_cast<int>(counts.size());
  if (classes == 0) throw ConfigError("allocate_prototypes: no classes");
  if (total < classes)
    throw ConfigError("allocate_prototypes: K=" + std::to_string(total) + " is smaller than the number of classes (" +
                      std::to_string(classes) + "); every class needs at least one prototype");
  if (std::all_of(counts.begin(), counts.end(), [](long c) { return c <= 0; }))
    throw ConfigError("allocate_prototypes: all class counts are zero");

  std::vector<double> freq(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) freq[c] = static_cast<double>(std::max(counts[c], 1L));
  const double freq_sum = std::accumulate(freq.begin(), freq.end(), 0.0);
  std::vector<double> weight(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) weight[c] = 1.0 / (freq[c] / freq_sum);
  const double weight_sum = std::accumulate(weight.begin(), weight.end(), 0.0);

  AllocationPlan plan;
  plan.total = total;
  for (double w : weight) plan.quotas.push_back(w / weight_sum * total);
  const auto seats = largest_remainder(plan.quotas, total);
  plan.budgets.assign(seats.begin(), seats.end());

  // Min-one rule. Prefer donors that were rounded up and can spare a seat:
  // they drop back to their floor and stay within one of their quota.
  for (int c = 0; c < classes; ++c) {
    if (plan.budgets[c] >= 1) continue;
    int donor = -1;
    for (int d = 0; d < classes; ++d) {
      if (plan.budgets[d] < 2 || plan.budgets[d] <= plan.quotas[d]) continue;
      if (donor < 0 || plan.budgets[d] > plan.budgets[donor]) donor = d;
    }
    if (donor < 0) {
      for (int d = 0; d < classes; ++d)
        if (plan.budgets[d] >= 2 && (donor < 0 || plan.budgets[d] > plan.budgets[donor])) donor = d;
    }
    if (donor < 0) throw ConfigError("allocate_prototypes: cannot give every class a prototype");
    --plan.budgets[donor];
    plan.budgets[c] = 1;
  }
  return plan;
}

std::vector<int> owner_vector(const AllocationPlan& plan) {
  std::vector<int> owner;
  for (std::size_t c = 0; c < plan.budgets.size(); ++c)
    owner.insert(owner.end(), static_cast<std::size_t>(plan.budgets[c]), static_cast<int>(c));
  return owner;
}

namespace {

/// Squared distances from every point to every centroid, N x k.
Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids) {
  Eigen::MatrixXd d = -2.0 * points * centroids.transpose();
  d.colwise() += points.rowwise().squaredNorm();
  d.rowwise() += centroids.rowwise().squaredNorm().transpose();
  return d.cwiseMax(0.0);
}

std::vector<int> nearest(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids) {
  const Eigen::MatrixXd d = squared_distances(points, centroids);
  std::vector<int> out(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    Eigen::Index j = 0;
    d.row(i).minCoeff(&j);
    out[static_cast<std::size_t>(i)] = static_cast<int>(j);
  }
  return out;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

Eigen::MatrixXd kmeans_plus_plus(const Eigen::MatrixXd& points, int k, std::mt19937_64& rng) {
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd centers(k, points.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centers.row(0) = points.row(first(rng));
  Eigen::VectorXd dist = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < k; ++j) {
    const double total = dist.sum();
    Eigen::Index pick = 0;
    if (total <= 0.0) {
      pick = first(rng);
    } else {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += dist(i);
        if (acc > target) {
          pick = i;
          break;
        }
      }
    }
    centers.row(j) = points.row(pick);
    dist = dist.cwiseMin((points.rowwise() - centers.row(j)).rowwise().squaredNorm());
  }
  return centers;
}

}  // namespace

double within_cluster_ss(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids) {
  if (points.rows() == 0) return 0.0;
  return squared_distances(points, centroids).rowwise().minCoeff().sum();
}

Eigen::MatrixXd mini_batch_kmeans(const Eigen::MatrixXd& points, int k, const KMeansOptions& options) {
  const Eigen::Index n = points.rows();
  if (k < 1) throw ConfigError("mini_batch_kmeans: k must be >= 1");
  if (n < k)
    throw ConfigError("mini_batch_kmeans: " + std::to_string(n) + " points cannot form " + std::to_string(k) +
                      " clusters; reduce K_c or supply more data");
  if (!points.allFinite()) throw DataError("mini_batch_kmeans: non-finite input");
  if (options.batch_size < 1 || options.iters < 0) throw ConfigError("mini_batch_kmeans: invalid options");

  std::mt19937_64 rng(options.seed);
  Eigen::MatrixXd centers = kmeans_plus_plus(points, k, rng);

  if (options.batch_size >= n) {
    std::vector<int> previous;
    for (int it = 0; it < options.iters; ++it) {
      const auto assign = nearest(points, centers);
      if (assign == previous) break;
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
      Eigen::VectorXd sizes = Eigen::VectorXd::Zero(k);
      for (Eigen::Index i = 0; i < n; ++i) {
        sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
        sizes(assign[static_cast<std::size_t>(i)]) += 1.0;
      }
      for (int j = 0; j < k; ++j)
        if (sizes(j) > 0.0) centers.row(j) = sums.row(j) / sizes(j);
      previous = assign;
    }
    return centers;
  }

  // Sculley-style updates with per-center learning rate 1 / (points seen).
  Eigen::VectorXd seen = Eigen::VectorXd::Zero(k);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  Eigen::MatrixXd batch(options.batch_size, points.cols());
  for (int it = 0; it < options.iters; ++it) {
    for (int b = 0; b < options.batch_size; ++b) batch.row(b) = points.row(pick(rng));
    const auto assign = nearest(batch, centers);
    for (int b = 0; b < options.batch_size; ++b) {
      const int j = assign[static_cast<std::size_t>(b)];
      seen(j) += 1.0;
      const double eta = 1.0 / seen(j);
      centers.row(j) = (1.0 - eta) * centers.row(j) + eta * batch.row(b);
    }
  }
  return centers;
}

void validate_bank(const PrototypeBank& bank) {
  if (bank.prototypes.empty()) throw DataError("prototype bank has no stages");
  if (!(bank.momentum >= 0.0 && bank.momentum <= 1.0)) throw ConfigError("prototype momentum must lie in [0, 1]");
  if (!(bank.epsilon > 0.0)) throw ConfigError("prototype epsilon must be positive");
  for (const auto& p : bank.prototypes) {
    if (p.rows() != bank.size()) throw DataError("prototype bank stage size differs from owner vector");
    if (!p.allFinite()) throw NumericalError("prototype bank contains non-finite values");
  }
}

PrototypeBank build_prototype_bank(const StageFeatures& features, const AllocationPlan& plan,
                                   const KMeansOptions& options) {
  if (features.features.empty()) throw DataError("build_prototype_bank: no samples");
  if (features.labels.size() != features.features.size())
    throw DataError("build_prototype_bank: labels and features differ in length");
  const std::size_t classes = plan.budgets.size();
  const std::size_t stages = features.features.front().size();

  PrototypeBank bank;
  bank.owner = owner_vector(plan);
  for (std::size_t s = 0; s < stages; ++s) {
    const Eigen::Index dim = features.features.front()[s].cols();
    Eigen::MatrixXd stage_bank(plan.total, dim);
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const int budget = plan.budgets[c];
      Eigen::Index count = 0;
      for (std::size_t i = 0; i < features.features.size(); ++i)
        if (features.labels[i][c] != 0) count += features.features[i][s].rows();
      Eigen::MatrixXd pool(count, dim);
      Eigen::Index at = 0;
      for (std::size_t i = 0; i < features.features.size(); ++i) {
        if (features.labels[i][c] == 0) continue;
        const auto& f = features.features[i][s];
        if (f.cols() != dim) throw ShapeError("build_prototype_bank: stage width differs between samples");
        pool.middleRows(at, f.rows()) = f;
        at += f.rows();
      }
      // Seed per (stage, class) so results do not depend on job order.
      KMeansOptions opts = options;
      opts.seed = options.seed ^ (0x9E3779B97F4A7C15ULL * (s * classes + c + 1));
      Eigen::MatrixXd centers;
      if (pool.rows() >= budget) {
        centers = mini_batch_kmeans(pool, budget, opts);
      } else {
        spdlog::warn("class {} has {} patches at stage {} but needs {} prototypes; sampling with replacement", c,
                     pool.rows(), s, budget);
        if (pool.rows() == 0) {
          // No positives at all: draw from every patch of the stage.
          Eigen::Index total = 0;
          for (const auto& f : features.features) total += f[s].rows();
          pool.resize(total, dim);
          at = 0;
          for (const auto& f : features.features) {
            pool.middleRows(at, f[s].rows()) = f[s];
            at += f[s].rows();
          }
        }
        std::mt19937_64 rng(opts.seed);
        std::uniform_int_distribution<Eigen::Index> pick(0, pool.rows() - 1);
        centers.resize(budget, dim);
        for (int j = 0; j < budget; ++j) centers.row(j) = pool.row(pick(rng));
      }
      stage_bank.middleRows(row, budget) = centers;
      row += budget;
    }
    bank.prototypes.push_back(std::move(stage_bank));
  }
  return bank;
}

PrototypeBank build_prototype_bank(const data::Dataset& dataset, const AllocationPlan& plan,
                                   const std::vector<int>& stages, const KMeansOptions& options) {
  if (plan.budgets.size() != static_cast<std::size_t>(dataset.manifest.num_classes))
    throw ConfigError("allocation plan does not match the dataset's class count");
  StageFeatures sf;
  for (const auto& sample : dataset.samples) {
    std::vector<Eigen::MatrixXd> per_stage;
    for (int s : stages) {
      if (s < 0 || s >= static_cast<int>(sample.stages.size()))
        throw ConfigError("stage index " + std::to_string(s) + " out of range");
      per_stage.push_back(sample.stages[static_cast<std::size_t>(s)].patches);
    }
    sf.features.push_back(std::move(per_stage));
    sf.labels.push_back(sample.labels);
  }
  return build_prototype_bank(sf, plan, options);
}

// ---- bank file ----------------------------------------------------------------
//
// Text header terminated by a line "end", followed by the stage matrices as
// raw little-endian float32, row-major, in stage order.

void save_bank(const PrototypeBank& bank, const std::filesystem::path& path) {
  validate_bank(bank);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(17);
  out << "format: mccl-prototype-bank 1\n";
  out << "stages: " << bank.num_stages() << "\n";
  out << "k: " << bank.size() << "\n";
  out << "dims:";
  for (const auto& p : bank.prototypes) out << " " << p.cols();
  out << "\nmomentum: " << bank.momentum << "\n";
  out << "epsilon: " << bank.epsilon << "\n";
  out << "version: " << bank.version << "\n";
  out << "owner:";
  for (int o : bank.owner) out << " " << o;
  out << "\nend\n";
  for (const auto& p : bank.prototypes) {
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        const float v = static_cast<float>(p(r, c));
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
  }
  if (!out) throw DataError("write failed: " + path.string());
}

PrototypeBank load_bank(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream header;
  std::string line;
  std::size_t lines = 0;
  bool ended = false;
  while (std::getline(in, line)) {
    ++lines;
    if (line == "end") {
      ended = true;
      break;
    }
    header << line << "\n";
  }
  if (!ended) throw ParseError(path.string(), lines, "missing 'end' of bank header");
  std::istringstream hs(header.str());
  PrototypeBank bank;
  int stages = -1;
  int k = -1;
  std::vector<long> dims;
  for (const auto& kv : parse_key_values(hs, path.string())) {
    try {
      if (kv.key == "format") {
        if (kv.value != "mccl-prototype-bank 1") throw ParseError(path.string(), kv.line, "unknown bank format");
      } else if (kv.key == "stages") {
        stages = static_cast<int>(parse_long(kv.value, "stages"));
      } else if (kv.key == "k") {
        k = static_cast<int>(parse_long(kv.value, "k"));
      } else if (kv.key == "dims") {
        for (const auto& t : split_whitespace(kv.value)) dims.push_back(parse_long(t, "dims"));
      } else if (kv.key == "momentum") {
        bank.momentum = parse_double(kv.value, "momentum");
      } else if (kv.key == "epsilon") {
        bank.epsilon = parse_double(kv.value, "epsilon");
      } else if (kv.key == "version") {
        bank.version = static_cast<std::uint64_t>(parse_long(kv.value, "version"));
      } else if (kv.key == "owner") {
        for (const auto& t : split_whitespace(kv.value)) bank.owner.push_back(static_cast<int>(parse_long(t, "owner")));
      } else {
        throw ParseError(path.string(), kv.line, "unknown key '" + kv.key + "'");
      }
    } catch (const ConfigError& e) {
      throw ParseError(path.string(), kv.line, e.what());
    }
  }
  if (stages < 1 || k < 1 || dims.size() != static_cast<std::size_t>(stages) ||
      bank.owner.size() != static_cast<std::size_t>(k))
    throw DataError(path.string() + ": inconsistent bank header");
  for (long d : dims) {
    if (d < 1) throw DataError(path.string() + ": invalid stage width");
    Eigen::MatrixXd p(k, d);
    std::vector<float> buf(static_cast<std::size_t>(k * d));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw DataError(path.string() + ": truncated prototype data");
    for (int r = 0; r < k; ++r)
      for (long c = 0; c < d; ++c) p(r, c) = buf[static_cast<std::size_t>(r * d + c)];
    bank.prototypes.push_back(std::move(p));
  }
  validate_bank(bank);
  return bank;
}

}  // namespace mccl::cpi
