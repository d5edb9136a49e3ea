#include "mccl/metrics.hpp"

#include "mccl/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

namespace mccl::metrics {

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double loss_term(double p, double y, double gp, double gn) {
  const double q = clamp_prob(p);
  return -(y * std::pow(1.0 - q, gp) * std::log(q) + (1.0 - y) * std::pow(q, gn) * std::log(1.0 - q));
}

double loss_derivative(double p, double y, double gp, double gn) {
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;  // flat where clamped
  double d = 0.0;
  if (y != 0.0) {
    // d/dp [-(1-p)^gp log p]
    const double a = std::pow(1.0 - p, gp);
    const double da = gp == 0.0 ? 0.0 : -gp * std::pow(1.0 - p, gp - 1.0);
    d += y * -(da * std::log(p) + a / p);
  }
  if (y != 1.0) {
    // d/dp [-p^gn log(1-p)]
    const double b = std::pow(p, gn);
    const double db = gn == 0.0 ? 0.0 : gn * std::pow(p, gn - 1.0);
    d += (1.0 - y) * -(db * std::log(1.0 - p) - b / (1.0 - p));
  }
  return d;
}

double f1(double tp, double fp, double fn) {
  const double denom = 2.0 * tp + fp + fn;
  return denom > 0.0 ? 2.0 * tp / denom : 0.0;
}

void check_shapes(const ScoreMatrix& scores, const TruthMatrix& truth) {
  if (scores.rows() != truth.rows() || scores.cols() != truth.cols())
    throw ShapeError("score and truth matrices differ in shape");
}

}  // namespace

double asymmetric_loss(const PredictionVector& prediction, double gamma_pos, double gamma_neg) {
  if (prediction.probs.size() != prediction.truth.size() || prediction.probs.size() == 0)
    throw ShapeError("asymmetric_loss: probabilities and truth differ in length");
  double total = 0.0;
  for (Eigen::Index c = 0; c < prediction.probs.size(); ++c)
    total += loss_term(prediction.probs(c), prediction.truth(c), gamma_pos, gamma_neg);
  return total / static_cast<double>(prediction.probs.size());
}

ag::Var asymmetric_loss(ag::Var probs, const Eigen::MatrixXd& targets, double gamma_pos, double gamma_neg) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols())
    throw ShapeError("asymmetric_loss: probabilities and targets differ in shape");
  const auto n = static_cast<double>(targets.size());
  const Eigen::MatrixXd& p = probs.value();
  Eigen::MatrixXd value(1, 1);
  value(0, 0) = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index c = 0; c < p.cols(); ++c) value(0, 0) += loss_term(p(i, c), targets(i, c), gamma_pos, gamma_neg);
  value(0, 0) /= n;
  return probs.tape()->record(std::move(value), {probs},
                              [probs, targets, gamma_pos, gamma_neg, n](ag::Tape& t, const Eigen::MatrixXd& g) {
                                const Eigen::MatrixXd& pv = probs.value();
                                Eigen::MatrixXd d(pv.rows(), pv.cols());
                                for (Eigen::Index i = 0; i < pv.rows(); ++i)
                                  for (Eigen::Index c = 0; c < pv.cols(); ++c)
                                    d(i, c) = loss_derivative(pv(i, c), targets(i, c), gamma_pos, gamma_neg);
                                t.accumulate(probs, d * (g(0, 0) / n));
                              });
}

F1Scores f1_suite(const ScoreMatrix& scores, const TruthMatrix& truth, double threshold) {
  check_shapes(scores, truth);
  if (scores.rows() == 0) throw DataError("f1_suite: no samples");
  const Eigen::Index n = scores.rows(), classes = scores.cols();
  std::vector<double> tp(static_cast<std::size_t>(classes)), fp(tp), fn(tp);
  double samples_total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double stp = 0, sfp = 0, sfn = 0;
    for (Eigen::Index c = 0; c < classes; ++c) {
      const bool pred = scores(i, c) >= threshold;
      const bool pos = truth(i, c) != 0;
      const auto cc = static_cast<std::size_t>(c);
      if (pred && pos) {
        tp[cc] += 1;
        stp += 1;
      } else if (pred) {
        fp[cc] += 1;
        sfp += 1;
      } else if (pos) {
        fn[cc] += 1;
        sfn += 1;
      }
    }
    samples_total += f1(stp, sfp, sfn);
  }
  F1Scores out;
  double gtp = 0, gfp = 0, gfn = 0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    out.per_class_f1.push_back(f1(tp[c], fp[c], fn[c]));
    gtp += tp[c];
    gfp += fp[c];
    gfn += fn[c];
  }
  out.macro_f1 = classes > 0 ? std::accumulate(out.per_class_f1.begin(), out.per_class_f1.end(), 0.0) /
                                   static_cast<double>(classes)
                             : 0.0;
  out.micro_f1 = f1(gtp, gfp, gfn);
  out.samples_f1 = samples_total / static_cast<double>(n);
  return out;
}

AveragePrecision mean_average_precision(const ScoreMatrix& scores, const TruthMatrix& truth) {
  check_shapes(scores, truth);
  AveragePrecision out;
  const Eigen::Index n = scores.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  double total = 0.0;
  int evaluated = 0;
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return scores(a, c) > scores(b, c); });
    double hits = 0.0, precision_sum = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (truth(order[r], c) == 0) continue;
      hits += 1.0;
      precision_sum += hits / static_cast<double>(r + 1);
    }
    if (hits == 0.0) {
      spdlog::debug("mAP: class {} has no positives; skipped", c);
      out.skipped_classes.push_back(static_cast<int>(c));
      out.per_class_ap.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double ap = precision_sum / hits;
    out.per_class_ap.push_back(ap);
    total += ap;
    ++evaluated;
  }
  if (evaluated == 0) throw DataError("mean_average_precision: no class has a positive sample");
  out.mean_ap = total / evaluated;
  return out;
}

double roc_auc(const Eigen::VectorXd& scores, const Eigen::VectorXi& truth) {
  if (scores.size() != truth.size()) throw ShapeError("roc_auc: length mismatch");
  // Rank-sum form of the Mann-Whitney statistic with average ranks for ties.
  const Eigen::Index n = scores.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return scores(a) < scores(b); });
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores(order[j]) == scores(order[i])) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (truth(order[k]) != 0) {
        pos += 1;
        rank_sum += avg_rank;
      } else {
        neg += 1;
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

AccuracyAuc accuracy_and_auc(const ScoreMatrix& scores, const TruthMatrix& truth, data::Mode mode) {
  check_shapes(scores, truth);
  if (scores.rows() == 0) throw DataError("accuracy_and_auc: no samples");
  AccuracyAuc out;
  double hits = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    if (mode == data::Mode::MultiClass && truth.row(i).sum() != 1)
      throw DataError("accuracy_and_auc: multi-class truth rows must be one-hot");
    Eigen::Index best = 0;
    scores.row(i).maxCoeff(&best);
    hits += truth(i, best) != 0 ? 1.0 : 0.0;
  }
  out.accuracy = hits / static_cast<double>(scores.rows());
  double total = 0;
  int evaluated = 0;
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    const double auc = roc_auc(scores.col(c), truth.col(c));
    if (std::isnan(auc)) {
      spdlog::debug("AUC: class {} lacks positives or negatives; skipped", c);
      out.skipped_classes.push_back(static_cast<int>(c));
      continue;
    }
    total += auc;
    ++evaluated;
  }
  out.macro_auc = evaluated > 0 ? total / evaluated : std::numeric_limits<double>::quiet_NaN();
  return out;
}

MetricsReport evaluate_scores(const ScoreMatrix& scores, const TruthMatrix& truth, data::Mode mode,
                              double threshold) {
  const auto f = f1_suite(scores, truth, threshold);
  const auto ap = mean_average_precision(scores, truth);
  const auto acc = accuracy_and_auc(scores, truth, mode);
  MetricsReport r;
  r.macro_f1 = f.macro_f1;
  r.micro_f1 = f.micro_f1;
  r.samples_f1 = f.samples_f1;
  r.per_class_f1 = f.per_class_f1;
  r.mean_ap = ap.mean_ap;
  r.per_class_ap = ap.per_class_ap;
  r.accuracy = acc.accuracy;
  r.macro_auc = acc.macro_auc;
  return r;
}

void write_key_values(std::ostream& out, const MetricsReport& r) {
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::setprecision(10);
  out << "macro_f1: " << r.macro_f1 << "\n";
  out << "micro_f1: " << r.micro_f1 << "\n";
  out << "samples_f1: " << r.samples_f1 << "\n";
  out << "mAP: " << r.mean_ap << "\n";
  out << "accuracy: " << r.accuracy << "\n";
  out << "macro_auc: " << r.macro_auc << "\n";
  for (std::size_t c = 0; c < r.per_class_f1.size(); ++c) out << "f1." << c << ": " << r.per_class_f1[c] << "\n";
  for (std::size_t c = 0; c < r.per_class_ap.size(); ++c) out << "ap." << c << ": " << r.per_class_ap[c] << "\n";
  out.flags(flags);
  out.precision(prec);
}

void write_table(std::ostream& out, const MetricsReport& r, const std::vector<std::string>& label_names) {
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::fixed << std::setprecision(2);
  out << "Macro F1  Micro F1  Samples F1  mAP     ACC     AUC\n";
  out << std::setw(8) << 100 * r.macro_f1 << "  " << std::setw(8) << 100 * r.micro_f1 << "  " << std::setw(10)
      << 100 * r.samples_f1 << "  " << std::setw(6) << 100 * r.mean_ap << "  " << std::setw(6) << 100 * r.accuracy
      << "  " << std::setw(6) << 100 * r.macro_auc << "\n\n";
  out << "class                     F1       AP\n";
  for (std::size_t c = 0; c < r.per_class_f1.size(); ++c) {
    const std::string name = c < label_names.size() ? label_names[c] : std::to_string(c);
    out << std::left << std::setw(22) << name << std::right << std::setw(8) << 100 * r.per_class_f1[c]
        << std::setw(9) << (c < r.per_class_ap.size() ? 100 * r.per_class_ap[c] : 0.0) << "\n";
  }
  out.flags(flags);
  out.precision(prec);
}

}  // namespace mccl::metrics
