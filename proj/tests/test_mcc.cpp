#include "mccl/error.hpp"
#include "mccl/mcc.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace mccl;
using namespace mccl::mcc;

namespace {

cpi::PrototypeBank make_bank(std::vector<Eigen::MatrixXd> protos) {
  cpi::PrototypeBank bank;
  bank.owner.assign(static_cast<std::size_t>(protos.front().rows()), 0);
  bank.prototypes = std::move(protos);
  return bank;
}

double entropy(const Eigen::RowVectorXd& w) {
  double h = 0;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w(i) > 0) h -= w(i) * std::log(w(i));
  return h;
}

}  // namespace

TEST_CASE("soft assignment examples") {
  SUBCASE("matching prototype dominates as temperature falls") {
    Eigen::MatrixXd protos = Eigen::MatrixXd::Identity(3, 3);
    const auto bank = make_bank({protos});
    const Eigen::MatrixXd patch = protos.row(1);
    const auto a = soft_assignment(patch, bank, 0, 1e-3);
    CHECK(a.weights(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a.weights(0, 0) < 1e-100);
  }
  SUBCASE("identical prototypes give a uniform row") {
    const Eigen::MatrixXd protos = Eigen::RowVectorXd::LinSpaced(4, 1, 2).replicate(5, 1);
    std::mt19937_64 rng(1);
    const auto a = soft_assignment(oracle::random_matrix(3, 4, rng), make_bank({protos}), 0, 0.1);
    CHECK((a.weights.array() - 0.2).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("two prototypes with similarities 1 and 0") {
    Eigen::MatrixXd protos(2, 2);
    protos << 1, 0, 0, 1;
    const Eigen::MatrixXd patch = (Eigen::MatrixXd(1, 2) << 3, 0).finished();
    const auto a = soft_assignment(patch, make_bank({protos}), 0, 0.1);
    const double s10 = 1.0 / (1.0 + std::exp(-10.0));
    CHECK(a.weights(0, 0) == doctest::Approx(s10).epsilon(1e-6));
    CHECK(a.weights(0, 0) == doctest::Approx(0.9999546).epsilon(1e-7));
    CHECK(a.weights(0, 1) == doctest::Approx(1.0 - s10).epsilon(1e-6));
  }
  SUBCASE("zero patch stays finite; width mismatch is a shape error") {
    const auto bank = make_bank({Eigen::MatrixXd::Identity(2, 2)});
    const auto a = soft_assignment(Eigen::MatrixXd::Zero(1, 2), bank, 0, 0.1);
    CHECK(a.weights.allFinite());
    CHECK(a.weights.sum() == doctest::Approx(1.0));
    CHECK_THROWS_AS(soft_assignment(Eigen::MatrixXd::Zero(1, 3), bank, 0, 0.1), ShapeError);
  }
}

TEST_CASE("assignment and reconstruction properties on random instances") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const int p = 1 + trial % 6, k = 1 + trial % 7, d = 1 + trial % 5;
    const Eigen::MatrixXd x = oracle::random_matrix(p, d, rng, 2.0);
    const Eigen::MatrixXd protos = oracle::random_matrix(k, d, rng);
    const auto bank = make_bank({protos});
    const double tau = trial % 3 == 0 ? 1.0 : 0.1;
    const auto a = soft_assignment(x, bank, 0, tau);
    CAPTURE(trial);
    // simplex and similarity range
    CHECK((a.weights.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
    CHECK(a.weights.minCoeff() >= 0.0);
    CHECK(a.similarities.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
    // triple-loop oracle
    const auto ref = oracle::reconstruct(x, protos, tau, bank.epsilon);
    const auto r = reconstruct_feature_map(x, a, bank, 0);
    CHECK((a.weights - ref.weights).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((r.patches - ref.patches).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((r.normalized - ref.normalized).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((r.pooled - ref.pooled).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(r.pooled.allFinite());
    // convex hull: coordinate-wise within prototype extremes
    for (Eigen::Index t = 0; t < d; ++t) {
      CHECK(r.patches.col(t).maxCoeff() <= protos.col(t).maxCoeff() + 1e-12);
      CHECK(r.patches.col(t).minCoeff() >= protos.col(t).minCoeff() - 1e-12);
    }
    // scale invariance of the assignment; eps shrunk so only its effect is removed
    {
      auto tiny = bank;
      tiny.epsilon = 1e-300;
      const auto base = soft_assignment(x, tiny, 0, tau);
      const auto scaled = soft_assignment(x * 3.7, tiny, 0, tau);
      CHECK((scaled.weights - base.weights).cwiseAbs().maxCoeff() < 1e-9);
    }
    // graph and plain paths agree
    ag::Tape tape;
    const auto g = build_stage_graph(tape.input(x), bank, 0, tau);
    CHECK((g.pooled.value() - r.pooled).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("reconstruction examples") {
  Eigen::MatrixXd protos(2, 3);
  protos << 2, 0, 0, 0, 4, 0;
  const auto bank = make_bank({protos});
  AssignmentResult a;
  a.weights = (Eigen::MatrixXd(2, 2) << 1, 0, 0.5, 0.5).finished();
  const auto r = reconstruct_feature_map(Eigen::MatrixXd::Ones(2, 3), a, bank, 0);
  CHECK(r.patches.row(0).isApprox(protos.row(0)));
  CHECK((r.normalized.row(0) - Eigen::RowVector3d(1, 0, 0)).norm() < 1e-8);
  CHECK(r.patches.row(1).isApprox(Eigen::RowVector3d(1, 2, 0)));
}

TEST_CASE("temperature sharpens assignments") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto bank = make_bank({oracle::random_matrix(5, 4, rng)});
    const Eigen::MatrixXd x = oracle::random_matrix(3, 4, rng);
    const auto w1 = soft_assignment(x, bank, 0, 1.0).weights;
    const auto w5 = soft_assignment(x, bank, 0, 0.5).weights;
    const auto w01 = soft_assignment(x, bank, 0, 0.1).weights;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      CHECK(entropy(w5.row(i)) <= entropy(w1.row(i)) + 1e-12);
      CHECK(entropy(w01.row(i)) <= entropy(w5.row(i)) + 1e-12);
    }
  }
}

TEST_CASE("pooled output gradient matches finite differences") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    const int p = 1 + trial % 4, k = 1 + trial % 5, d = 2 + trial % 5;
    const auto bank = make_bank({oracle::random_matrix(k, d, rng)});
    const Eigen::MatrixXd x0 = oracle::random_matrix(p, d, rng);
    const Eigen::MatrixXd w = oracle::random_matrix(1, d, rng);
    auto f = [&](const Eigen::MatrixXd& x) {
      ag::Tape t;
      return build_stage_graph(t.input(x), bank, 0, 0.5).pooled.value().cwiseProduct(w).sum();
    };
    ag::Tape t;
    ag::Var x = t.input(x0);
    const auto g = build_stage_graph(x, bank, 0, 0.5);
    t.backward(ag::sum_all(ag::mul(g.pooled, t.constant(w))));
    CAPTURE(trial);
    CHECK(oracle::grad_error(x.grad(), oracle::numeric_grad(f, x0)) <= 1e-3);
  }
}

TEST_CASE("momentum update examples") {
  std::mt19937_64 rng(4);
  SUBCASE("lambda 1 is a bit-exact no-op") {
    auto bank = make_bank({oracle::random_matrix(4, 3, rng)});
    const auto before = bank.prototypes;
    const Eigen::MatrixXd x = oracle::random_matrix(6, 3, rng);
    momentum_update(bank, 0, x, soft_assignment(x, bank, 0, 0.1).weights, 1.0);
    CHECK(bank.prototypes == before);
  }
  SUBCASE("lambda 0 with a one-hot patch replaces the prototype") {
    auto bank = make_bank({oracle::random_matrix(3, 2, rng)});
    const Eigen::MatrixXd x = (Eigen::MatrixXd(1, 2) << 5, -1).finished();
    const Eigen::MatrixXd w = (Eigen::MatrixXd(1, 3) << 0, 1, 0).finished();
    const auto before = bank.prototypes[0];
    momentum_update(bank, 0, x, w, 0.0);
    CHECK(bank.prototypes[0].row(1) == x.row(0));
    CHECK(bank.prototypes[0].row(0) == before.row(0));  // zero mass: untouched
    CHECK(bank.version == 1);
  }
  SUBCASE("lambda 0.5 halfway to the target") {
    auto bank = make_bank({Eigen::MatrixXd::Zero(1, 4)});
    momentum_update(bank, 0, Eigen::MatrixXd::Ones(2, 4), Eigen::MatrixXd::Ones(2, 1), 0.5);
    CHECK(bank.prototypes[0].isApprox(Eigen::MatrixXd::Constant(1, 4, 0.5)));
  }
  SUBCASE("out-of-range lambda is a configuration error") {
    auto bank = make_bank({Eigen::MatrixXd::Zero(1, 4)});
    CHECK_THROWS_AS(momentum_update(bank, 0, Eigen::MatrixXd::Ones(1, 4), Eigen::MatrixXd::Ones(1, 1), 1.1),
                    ConfigError);
  }
}

TEST_CASE("forward_stage modes") {
  std::mt19937_64 rng(6);
  auto bank = make_bank({oracle::random_matrix(4, 3, rng)});
  const Eigen::MatrixXd x = oracle::random_matrix(5, 3, rng);
  const auto before = bank.prototypes;
  const auto e1 = forward_stage(x, bank, 0, 0.1, 0.9, false);
  const auto e2 = forward_stage(x, bank, 0, 0.1, 0.9, false);
  CHECK(e1.reconstructed.pooled == e2.reconstructed.pooled);
  CHECK(bank.prototypes == before);
  const auto t1 = forward_stage(x, bank, 0, 0.1, 1.0, true);
  CHECK(t1.reconstructed.pooled == e1.reconstructed.pooled);
  CHECK(bank.prototypes == before);
  const auto t2 = forward_stage(x, bank, 0, 0.1, 0.9, true);
  CHECK(t2.reconstructed.pooled == e1.reconstructed.pooled);  // outputs use the pre-update bank
  CHECK_FALSE(bank.prototypes == before);
}

TEST_CASE("repeated updates on a constant batch contract geometrically") {
  // One-hot assignments keep every target fixed across steps, so the
  // distance to the target shrinks by exactly lambda per step.
  std::mt19937_64 rng(8);
  auto bank = make_bank({oracle::random_matrix(3, 4, rng)});
  const Eigen::MatrixXd x = oracle::random_matrix(6, 4, rng);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(6, 3);
  for (int i = 0; i < 6; ++i) w(i, i % 3) = 1.0;
  Eigen::MatrixXd target = Eigen::MatrixXd::Zero(3, 4);
  for (int i = 0; i < 6; ++i) target.row(i % 3) += x.row(i) / 2.0;
  for (int step = 0; step < 20; ++step) {
    const Eigen::MatrixXd before = bank.prototypes[0];
    momentum_update(bank, 0, x, w, 0.9);
    for (int k = 0; k < 3; ++k) {
      const double ratio = (bank.prototypes[0].row(k) - target.row(k)).norm() / (before.row(k) - target.row(k)).norm();
      CHECK(ratio == doctest::Approx(0.9).epsilon(1e-6));
    }
  }
}
