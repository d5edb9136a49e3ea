#include "mccl/analysis.hpp"

#include "mccl/error.hpp"
#include "mccl/mcc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace mccl::analysis {

StageAnalysis correlate(const std::vector<Eigen::MatrixXd>& sample_weights,
                        const std::vector<std::vector<int>>& labels, int num_classes, double dead_fraction) {
  if (sample_weights.empty()) throw DataError("prototype analysis needs at least one sample");
  if (sample_weights.size() != labels.size()) throw ShapeError("analysis: weights and labels differ in length");
  const Eigen::Index k = sample_weights.front().cols();
  StageAnalysis out;
  out.correlation = Eigen::MatrixXd::Zero(num_classes, k);
  out.usage = Eigen::VectorXd::Zero(k);
  std::vector<double> patch_count(static_cast<std::size_t>(num_classes), 0.0);
  for (std::size_t i = 0; i < sample_weights.size(); ++i) {
    const auto& w = sample_weights[i];
    if (w.cols() != k) throw ShapeError("analysis: prototype count differs between samples");
    const Eigen::RowVectorXd mass = w.colwise().sum();
    out.usage += mass.transpose();
    for (int c = 0; c < num_classes; ++c) {
      if (!labels[i][static_cast<std::size_t>(c)]) continue;
      out.correlation.row(c) += mass;
      patch_count[static_cast<std::size_t>(c)] += static_cast<double>(w.rows());
    }
  }
  for (int c = 0; c < num_classes; ++c) {
    if (patch_count[static_cast<std::size_t>(c)] == 0.0) continue;
    out.correlation.row(c) /= patch_count[static_cast<std::size_t>(c)];
    const double total = out.correlation.row(c).sum();
    if (total > 0.0) out.correlation.row(c) /= total;
  }
  const double floor = dead_fraction * out.usage.mean();
  for (Eigen::Index j = 0; j < k; ++j) out.dead.push_back(out.usage(j) < floor);
  return out;
}

PrototypeAnalysis analyze_prototypes(model::Model& model, const cpi::PrototypeBank& bank,
                                     const data::Dataset& dataset, double tau, double dead_fraction) {
  if (dataset.samples.empty()) throw DataError("prototype analysis needs a non-empty dataset");
  if (bank.num_stages() == 0) throw ConfigError("the run has no prototype bank (clustering layer disabled)");
  model.check_manifest(dataset.manifest);
  model.check_bank(bank);
  const auto features = model.stage_features(dataset);
  PrototypeAnalysis out;
  out.owner = bank.owner;
  for (int j = 0; j < bank.num_stages(); ++j) {
    std::vector<Eigen::MatrixXd> weights;
    for (const auto& f : features.features)
      weights.push_back(mcc::soft_assignment(f[static_cast<std::size_t>(j)], bank, j, tau).weights);
    out.stages.push_back(correlate(weights, features.labels, dataset.manifest.num_classes, dead_fraction));
  }
  return out;
}

double owner_dominance(const Eigen::MatrixXd& correlation, const std::vector<int>& owner) {
  if (static_cast<std::size_t>(correlation.cols()) != owner.size())
    throw ShapeError("owner vector length differs from the prototype count");
  int counted = 0, dominant = 0;
  for (Eigen::Index c = 0; c < correlation.rows(); ++c) {
    if (correlation.row(c).sum() <= 0.0) continue;
    ++counted;
    Eigen::Index best = 0;
    correlation.row(c).maxCoeff(&best);
    if (owner[static_cast<std::size_t>(best)] == c) ++dominant;
  }
  return counted == 0 ? 0.0 : static_cast<double>(dominant) / counted;
}

namespace {

std::ofstream open(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(10);
  return out;
}

// Grayscale heatmap, each cell drawn as a square block, rows = classes.
void write_heatmap(const Eigen::MatrixXd& m, const std::filesystem::path& path) {
  const int cell = std::clamp(512 / static_cast<int>(std::max<Eigen::Index>(m.cols(), 1)), 2, 24);
  const Eigen::Index w = m.cols() * cell, h = m.rows() * cell;
  const double top = std::max(m.maxCoeff(), 1e-12);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << w << " " << h << "\n255\n";
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      const double v = m(y / cell, x / cell) / top;
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (1.0 - v)))));
    }
}

}  // namespace

void write_analysis(const PrototypeAnalysis& analysis, const std::vector<std::string>& label_names,
                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto summary = open(dir / "summary.txt");
  for (std::size_t j = 0; j < analysis.stages.size(); ++j) {
    const auto& st = analysis.stages[j];
    const std::string tag = "stage" + std::to_string(j);
    {
      auto out = open(dir / ("correlation_" + tag + ".csv"));
      out << "class";
      for (Eigen::Index k = 0; k < st.correlation.cols(); ++k) out << ",p" << k;
      out << "\n";
      for (Eigen::Index c = 0; c < st.correlation.rows(); ++c) {
        out << (static_cast<std::size_t>(c) < label_names.size() ? label_names[static_cast<std::size_t>(c)]
                                                                  : std::to_string(c));
        for (Eigen::Index k = 0; k < st.correlation.cols(); ++k) out << "," << st.correlation(c, k);
        out << "\n";
      }
    }
    {
      auto out = open(dir / ("usage_" + tag + ".csv"));
      out << "prototype,owner,usage,dead\n";
      for (Eigen::Index k = 0; k < st.usage.size(); ++k)
        out << k << "," << analysis.owner[static_cast<std::size_t>(k)] << "," << st.usage(k) << ","
            << (st.dead[static_cast<std::size_t>(k)] ? 1 : 0) << "\n";
    }
    write_heatmap(st.correlation, dir / ("heatmap_" + tag + ".pgm"));
    const auto dead = std::count(st.dead.begin(), st.dead.end(), true);
    summary << tag << " prototypes: " << st.usage.size() << " dead: " << dead
            << " owner_dominance: " << owner_dominance(st.correlation, analysis.owner) << "\n";
  }
}

}  // namespace mccl::analysis
