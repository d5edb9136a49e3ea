#include "mccl/error.hpp"
#include "mccl/metrics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <numeric>

using namespace mccl;
using namespace mccl::metrics;
using Eigen::MatrixXd;
using Eigen::MatrixXi;

namespace {

double scalar_loss(double p, int y, double gp = 0.0, double gn = 2.0) {
  PredictionVector v{Eigen::VectorXd::Constant(1, p), Eigen::VectorXi::Constant(1, y)};
  return asymmetric_loss(v, gp, gn);
}

}  // namespace

TEST_CASE("asymmetric loss values") {
  CHECK(scalar_loss(0.5, 1) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(scalar_loss(0.5, 0) == doctest::Approx(0.173287).epsilon(1e-5));
  CHECK(scalar_loss(1.0, 1) < 1e-7);
  CHECK(scalar_loss(0.0, 0) < 1e-7);
  CHECK(std::isfinite(scalar_loss(0.0, 1)));
  CHECK(std::isfinite(scalar_loss(1.0, 0)));
  for (double p : {0.01, 0.3, 0.77})
    for (int y : {0, 1}) CHECK(scalar_loss(p, y, 1.0, 3.0) == doctest::Approx(oracle::asl(p, y, 1.0, 3.0)));

  PredictionVector v{(Eigen::VectorXd(3) << 0.2, 0.5, 0.9).finished(), (Eigen::VectorXi(3) << 1, 0, 1).finished()};
  CHECK(asymmetric_loss(v) ==
        doctest::Approx((oracle::asl(0.2, 1, 0, 2) + oracle::asl(0.5, 0, 0, 2) + oracle::asl(0.9, 1, 0, 2)) / 3));
  v.truth.resize(2);
  CHECK_THROWS_AS(asymmetric_loss(v), ShapeError);
}

TEST_CASE("asymmetric loss is monotone on a grid") {
  double prev_pos = std::numeric_limits<double>::infinity(), prev_neg = -1.0;
  for (int i = 1; i < 200; ++i) {
    const double p = i / 200.0;
    const double lp = scalar_loss(p, 1), ln = scalar_loss(p, 0);
    CHECK(lp < prev_pos);
    CHECK(ln > prev_neg);
    prev_pos = lp;
    prev_neg = ln;
  }
}

TEST_CASE("batched loss matches scalar form and its gradient") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.02, 0.98);
  MatrixXd p(4, 3), y(4, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    p(i) = u(rng);
    y(i) = u(rng) > 0.5 ? 1 : 0;
  }
  double expect = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) expect += oracle::asl(p(i), static_cast<int>(y(i)), 0, 2);
  expect /= static_cast<double>(p.size());

  ag::Parameter probs("p", p);
  ag::Tape t;
  ag::Var loss = asymmetric_loss(t.param(probs), y);
  CHECK(loss.value()(0, 0) == doctest::Approx(expect).epsilon(1e-12));
  t.backward(loss);
  auto f = [&](const MatrixXd& v) {
    ag::Tape tt;
    return asymmetric_loss(tt.constant(v), y).value()(0, 0);
  };
  CHECK(oracle::grad_error(probs.grad, oracle::numeric_grad(f, p)) < 1e-6);
}

TEST_CASE("f1 worked examples") {
  const MatrixXi truth = (MatrixXi(2, 3) << 1, 0, 1, 0, 1, 0).finished();
  const MatrixXd pred = (MatrixXd(2, 3) << 1, 0, 0, 0, 1, 1).finished();
  const auto f = f1_suite(pred, truth);
  CHECK(f.per_class_f1 == std::vector<double>{1.0, 1.0, 0.0});
  CHECK(f.macro_f1 == doctest::Approx(2.0 / 3));
  CHECK(f.micro_f1 == doctest::Approx(2.0 / 3));
  CHECK(f.samples_f1 == doctest::Approx(2.0 / 3));

  const auto perfect = f1_suite(truth.cast<double>(), truth);
  CHECK(perfect.macro_f1 == 1.0);
  CHECK(perfect.micro_f1 == 1.0);
  CHECK(perfect.samples_f1 == 1.0);

  const auto empty = f1_suite(MatrixXd::Zero(2, 3), truth);
  CHECK(empty.macro_f1 == 0.0);
  CHECK(empty.micro_f1 == 0.0);
  CHECK_THROWS_AS(f1_suite(MatrixXd(0, 3), MatrixXi(0, 3)), DataError);
}

TEST_CASE("ranking worked examples") {
  const MatrixXd s = (MatrixXd(3, 1) << 0.9, 0.8, 0.1).finished();
  const MatrixXi y = (MatrixXi(3, 1) << 1, 0, 1).finished();
  CHECK(mean_average_precision(s, y).mean_ap == doctest::Approx(5.0 / 6));
  CHECK(roc_auc(s.col(0), y.col(0)) == doctest::Approx(0.5));

  const MatrixXi sorted = (MatrixXi(3, 1) << 1, 1, 0).finished();
  CHECK(mean_average_precision(s, sorted).mean_ap == 1.0);
  CHECK(roc_auc(s.col(0), sorted.col(0)) == 1.0);
  CHECK(roc_auc(Eigen::VectorXd::Constant(3, 0.4), y.col(0)) == 0.5);
  CHECK(std::isnan(roc_auc(s.col(0), Eigen::VectorXi::Ones(3))));

  const MatrixXi two = (MatrixXi(3, 2) << 1, 0, 0, 0, 1, 0).finished();
  const auto ap = mean_average_precision(MatrixXd::Constant(3, 2, 0.5), two);
  CHECK(ap.skipped_classes == std::vector<int>{1});
  CHECK(std::isnan(ap.per_class_ap[1]));
  CHECK(ap.mean_ap == doctest::Approx(ap.per_class_ap[0]));
  CHECK_THROWS_AS(mean_average_precision(s, MatrixXi::Zero(3, 1)), DataError);
}

TEST_CASE("accuracy") {
  const MatrixXd s = (MatrixXd(3, 3) << 0.1, 0.8, 0.1, 0.6, 0.3, 0.1, 0.2, 0.2, 0.6).finished();
  const MatrixXi y = (MatrixXi(3, 3) << 0, 1, 0, 0, 1, 0, 0, 0, 1).finished();
  CHECK(accuracy_and_auc(s, y, data::Mode::MultiClass).accuracy == doctest::Approx(2.0 / 3));
  MatrixXi bad = y;
  bad(0, 0) = 1;
  CHECK_THROWS_AS(accuracy_and_auc(s, bad, data::Mode::MultiClass), DataError);
  CHECK_NOTHROW(accuracy_and_auc(s, bad, data::Mode::MultiLabel));
}

TEST_CASE("every metric equals the brute-force oracle on random instances") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size_n(1, 8), size_c(1, 5), coin(0, 1), level(0, 4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int checked_ranking = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int n = size_n(rng), c = size_c(rng);
    MatrixXd s(n, c);
    MatrixXi y(n, c);
    const bool ties = trial % 2 == 0;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < c; ++k) {
        s(i, k) = ties ? level(rng) / 4.0 : u(rng);
        y(i, k) = coin(rng);
      }
    const double t = ties ? 0.5 : u(rng) * 0.8 + 0.1;
    const auto got = f1_suite(s, y, t);
    const auto want = oracle::f1_scores(s, y, t);
    CHECK(std::abs(got.macro_f1 - want.macro) < 1e-9);
    CHECK(std::abs(got.micro_f1 - want.micro) < 1e-9);
    CHECK(std::abs(got.samples_f1 - want.samples) < 1e-9);

    double ap_sum = 0, auc_sum = 0;
    int ap_n = 0, auc_n = 0;
    for (int k = 0; k < c; ++k) {
      const double ap = oracle::average_precision(s.col(k), y.col(k));
      if (!std::isnan(ap)) {
        ap_sum += ap;
        ++ap_n;
      }
      const double a = oracle::auc(s.col(k), y.col(k));
      CHECK((std::isnan(a) ? std::isnan(roc_auc(s.col(k), y.col(k))) : std::abs(roc_auc(s.col(k), y.col(k)) - a) < 1e-9));
      if (!std::isnan(a)) {
        auc_sum += a;
        ++auc_n;
      }
    }
    if (ap_n == 0) {
      CHECK_THROWS_AS(mean_average_precision(s, y), DataError);
      continue;
    }
    ++checked_ranking;
    CHECK(std::abs(mean_average_precision(s, y).mean_ap - ap_sum / ap_n) < 1e-9);
    const auto acc = accuracy_and_auc(s, y, data::Mode::MultiLabel);
    if (auc_n > 0) CHECK(std::abs(acc.macro_auc - auc_sum / auc_n) < 1e-9);

    const auto report = evaluate_scores(s, y, data::Mode::MultiLabel, t);
    for (double v : {report.macro_f1, report.micro_f1, report.samples_f1, report.mean_ap, report.accuracy}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(report.macro_f1 ==
          doctest::Approx(std::accumulate(report.per_class_f1.begin(), report.per_class_f1.end(), 0.0) / c));
  }
  CHECK(checked_ranking > 400);
}

TEST_CASE("micro F1 equals F1 of the flattened problem") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    MatrixXd s(6, 4);
    MatrixXi y(6, 4);
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      s(i) = u(rng);
      y(i) = u(rng) < 0.4;
    }
    for (double t : {0.2, 0.5, 0.8}) {
      const MatrixXd flat_s = Eigen::Map<const MatrixXd>(s.data(), s.size(), 1);
      const MatrixXi flat_y = Eigen::Map<const MatrixXi>(y.data(), y.size(), 1);
      CHECK(f1_suite(s, y, t).micro_f1 == doctest::Approx(f1_suite(flat_s, flat_y, t).per_class_f1[0]));
    }
  }
}

TEST_CASE("permuting samples leaves metrics unchanged") {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    MatrixXd s(7, 3);
    MatrixXi y(7, 3);
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      s(i) = u(rng);
      y(i) = u(rng) < 0.5;
    }
    y.row(0).setOnes();
    y.row(1).setZero();
    std::vector<int> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    MatrixXd ps(7, 3);
    MatrixXi py(7, 3);
    for (int i = 0; i < 7; ++i) {
      ps.row(i) = s.row(perm[static_cast<std::size_t>(i)]);
      py.row(i) = y.row(perm[static_cast<std::size_t>(i)]);
    }
    const auto a = evaluate_scores(s, y, data::Mode::MultiLabel);
    const auto b = evaluate_scores(ps, py, data::Mode::MultiLabel);
    CHECK(a.macro_f1 == doctest::Approx(b.macro_f1).epsilon(1e-12));
    CHECK(a.micro_f1 == doctest::Approx(b.micro_f1).epsilon(1e-12));
    CHECK(a.samples_f1 == doctest::Approx(b.samples_f1).epsilon(1e-12));
    CHECK(a.mean_ap == doctest::Approx(b.mean_ap).epsilon(1e-12));
    CHECK(a.accuracy == doctest::Approx(b.accuracy).epsilon(1e-12));
    CHECK(a.macro_auc == doctest::Approx(b.macro_auc).epsilon(1e-12));
  }
}
