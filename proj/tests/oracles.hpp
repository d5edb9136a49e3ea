#pragma once

// Slow, obviously-correct reference implementations used by the tests.

#include "mccl/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

// ---- allocation ---------------------------------------------------------------

inline std::vector<double> inverse_frequency_quotas(const std::vector<long>& counts, int total) {
  std::vector<double> w;
  double sum_p = 0.0;
  for (long c : counts) sum_p += static_cast<double>(std::max(c, 1L));
  double sum_w = 0.0;
  for (long c : counts) {
    w.push_back(1.0 / (static_cast<double>(std::max(c, 1L)) / sum_p));
    sum_w += w.back();
  }
  for (auto& x : w) x = x / sum_w * total;
  return w;
}

/// Whether some integer allocation has every budget >= 1, sums to `total`
/// and stays within one seat of every quota. Within one seat forces floor or
/// ceil, and quotas below 1 must take the ceil (1), so the cheapest valid
/// allocation sums to #(q < 1) + sum of floor(q) over the others.
inline bool bounded_allocation_exists(const std::vector<double>& quotas, int total) {
  long minimum = 0;
  for (double q : quotas) minimum += q < 1.0 ? 1 : static_cast<long>(std::floor(q));
  return minimum <= total;
}

// ---- clustering layer ------------------------------------------------------------

struct Reconstruction {
  Eigen::MatrixXd weights, patches, normalized;
  Eigen::RowVectorXd pooled;
};

inline Reconstruction reconstruct(const Eigen::MatrixXd& x, const Eigen::MatrixXd& protos, double tau, double eps) {
  const Eigen::Index p = x.rows(), k = protos.rows(), d = x.cols();
  Reconstruction out;
  out.weights.resize(p, k);
  for (Eigen::Index i = 0; i < p; ++i) {
    std::vector<double> logits(static_cast<std::size_t>(k));
    for (Eigen::Index j = 0; j < k; ++j) {
      double dot = 0, nx = 0, np = 0;
      for (Eigen::Index t = 0; t < d; ++t) {
        dot += x(i, t) * protos(j, t);
        nx += x(i, t) * x(i, t);
        np += protos(j, t) * protos(j, t);
      }
      logits[static_cast<std::size_t>(j)] = dot / (std::sqrt(nx) * std::sqrt(np) + eps) / tau;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double l : logits) z += std::exp(l - mx);
    for (Eigen::Index j = 0; j < k; ++j) out.weights(i, j) = std::exp(logits[static_cast<std::size_t>(j)] - mx) / z;
  }
  out.patches = Eigen::MatrixXd::Zero(p, d);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < k; ++j)
      for (Eigen::Index t = 0; t < d; ++t) out.patches(i, t) += out.weights(i, j) * protos(j, t);
  out.normalized.resize(p, d);
  out.pooled = Eigen::RowVectorXd::Zero(d);
  for (Eigen::Index i = 0; i < p; ++i) {
    double n = 0;
    for (Eigen::Index t = 0; t < d; ++t) n += out.patches(i, t) * out.patches(i, t);
    n = std::sqrt(n);
    for (Eigen::Index t = 0; t < d; ++t) {
      out.normalized(i, t) = out.patches(i, t) / (n + eps);
      out.pooled(t) += out.normalized(i, t) / static_cast<double>(p);
    }
  }
  return out;
}

// ---- finite differences -------------------------------------------------------------

/// Central differences of a scalar function of one matrix.
inline Eigen::MatrixXd numeric_grad(const std::function<double(const Eigen::MatrixXd&)>& f, Eigen::MatrixXd x,
                                    double h = 1e-6) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double keep = x(i, j);
      x(i, j) = keep + h;
      const double up = f(x);
      x(i, j) = keep - h;
      const double down = f(x);
      x(i, j) = keep;
      g(i, j) = (up - down) / (2 * h);
    }
  return g;
}

/// max |a-b| / max(1, |b|) over the entries, i.e. relative for large
/// gradients, absolute near zero.
inline double grad_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
  double worst = 0.0;
  const double scale = std::max(1e-3, numeric.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < analytic.rows(); ++i)
    for (Eigen::Index j = 0; j < analytic.cols(); ++j)
      worst = std::max(worst, std::abs(analytic(i, j) - numeric(i, j)) / scale);
  return worst;
}

// ---- metrics ---------------------------------------------------------------------

inline double f1(long tp, long fp, long fn) {
  const long denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

struct F1 {
  double macro, micro, samples;
  std::vector<double> per_class;
};

inline F1 f1_scores(const Eigen::MatrixXd& scores, const Eigen::MatrixXi& truth, double t) {
  const Eigen::Index n = scores.rows(), c = scores.cols();
  F1 out{0, 0, 0, {}};
  long TP = 0, FP = 0, FN = 0;
  for (Eigen::Index k = 0; k < c; ++k) {
    long tp = 0, fp = 0, fn = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool pred = scores(i, k) >= t, pos = truth(i, k) == 1;
      tp += pred && pos;
      fp += pred && !pos;
      fn += !pred && pos;
    }
    out.per_class.push_back(f1(tp, fp, fn));
    out.macro += out.per_class.back() / static_cast<double>(c);
    TP += tp;
    FP += fp;
    FN += fn;
  }
  out.micro = f1(TP, FP, FN);
  for (Eigen::Index i = 0; i < n; ++i) {
    long tp = 0, fp = 0, fn = 0;
    for (Eigen::Index k = 0; k < c; ++k) {
      const bool pred = scores(i, k) >= t, pos = truth(i, k) == 1;
      tp += pred && pos;
      fp += pred && !pos;
      fn += !pred && pos;
    }
    out.samples += f1(tp, fp, fn) / static_cast<double>(n);
  }
  return out;
}

/// Precision at every positive, rank computed by explicit pairwise counting
/// (sample j ranks before i when its score is higher, or equal with j < i).
inline double average_precision(const Eigen::VectorXd& s, const Eigen::VectorXi& y) {
  const Eigen::Index n = s.size();
  double sum = 0;
  long positives = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y(i) != 1) continue;
    ++positives;
    long rank = 1, pos_at_or_above = 1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const bool before = s(j) > s(i) || (s(j) == s(i) && j < i);
      if (before) {
        ++rank;
        pos_at_or_above += y(j) == 1;
      }
    }
    sum += static_cast<double>(pos_at_or_above) / static_cast<double>(rank);
  }
  return positives == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(positives);
}

inline double auc(const Eigen::VectorXd& s, const Eigen::VectorXi& y) {
  double good = 0;
  long pairs = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    for (Eigen::Index j = 0; j < s.size(); ++j) {
      if (y(i) != 1 || y(j) != 0) continue;
      ++pairs;
      good += s(i) > s(j) ? 1.0 : (s(i) == s(j) ? 0.5 : 0.0);
    }
  return pairs == 0 ? std::numeric_limits<double>::quiet_NaN() : good / static_cast<double>(pairs);
}

inline double asl(double p, int y, double gp, double gn) {
  p = std::clamp(p, 1e-8, 1.0 - 1e-8);
  return y == 1 ? -std::pow(1.0 - p, gp) * std::log(p) : -std::pow(p, gn) * std::log(1.0 - p);
}

}  // namespace oracle
