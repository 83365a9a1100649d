#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "dikf/filter.hpp"
#include "oracles.hpp"

using namespace dikf;
using Catch::Approx;

namespace {

// h(x) = x[0], a linear scalar observation.
struct FirstCoordinate {
  Prediction predict(const StateVector& x) const {
    const std::array<SparseJacobian::Entry, 1> e{{{0, 1.0}}};
    return {x.coords()[0], SparseJacobian::from_entries(e)};
  }
  double residual(double z, double h) const { return z - h; }
};

StateVector two_atoms(double separation) {
  StateVector x = StateVector::zeros(2);
  x.set_atom(1, Vec3(separation, 0, 0));
  return x;
}

}  // namespace

TEST_CASE("gain example") {
  const CovarianceMatrix c = init_covariance(2, 1.0);
  const SparseJacobian h = predict(Constraint::distance(0, 1, 1, 1), two_atoms(2.0)).jacobian;
  // H = (-1,0,0, 1,0,0); H C H^T = 2; K = C H^T / (2 + 2).
  const Eigen::VectorXd k = kalman_gain(c, h, 2.0);
  CHECK(k[0] == Approx(-0.25));
  CHECK(k[3] == Approx(0.25));
  CHECK(k[1] == 0.0);

  const std::array<SparseJacobian::Entry, 1> e{{{0, 1.0}}};
  const Eigen::VectorXd k1 = kalman_gain(init_covariance(1, 1.0), SparseJacobian::from_entries(e), 1.0);
  CHECK(k1[0] == Approx(0.5));
  CHECK(k1[1] == 0.0);
  CHECK(k1[2] == 0.0);

  const Eigen::VectorXd tiny = kalman_gain(c, h, 1e12);
  CHECK(tiny.cwiseAbs().maxCoeff() < 1e-11);
}

TEST_CASE("sparse gain matches a dense oracle") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const CovarianceMatrix c(oracle::random_spd(12, rng));
    StateVector x = init_state(4, {0.0, 5.0}, 100 + t);
    const SparseJacobian h = predict(Constraint::angle(2, 0, 3, 1.0, 0.1), x).jacobian;
    const Eigen::VectorXd hd = h.to_dense(12);
    const Eigen::VectorXd dense = c.entries() * hd / (hd.dot(c.entries() * hd) + 0.1);
    CHECK((kalman_gain(c, h, 0.1) - dense).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, dense.norm()));
  }
}

TEST_CASE("linear update reproduces the conjugate Gaussian posterior") {
  for (double p : {1.0, 100.0, 3.5}) {
    for (double v : {1e-4, 1.0, 100.0}) {
      const double m0 = 1.25;
      const double z = 10.0;
      StateVector x = StateVector::zeros(1);
      x.mutable_coords()[0] = m0;
      CovarianceMatrix c = init_covariance(1, p);
      const UpdateStats s = iterated_update(x, c, FirstCoordinate{}, z, v, SolveConfig{});
      CHECK(std::abs(x.coords()[0] - (m0 + p * (z - m0) / (p + v))) <= 1e-12 * std::max(1.0, z));
      CHECK(std::abs(c.entries()(0, 0) - p * v / (p + v)) <= 1e-12 * std::max(1.0, p));
      CHECK(c.entries()(1, 1) == p);
      CHECK(s.inner_iterations == 1);
      CHECK_FALSE(s.skipped);
    }
  }
  SECTION("worked example: prior 100, variance 100, measurement 10") {
    StateVector x = StateVector::zeros(1);
    CovarianceMatrix c = init_covariance(1, 100.0);
    iterated_update(x, c, FirstCoordinate{}, 10.0, 100.0, SolveConfig{});
    CHECK(x.coords()[0] == Approx(5.0));
    CHECK(c.entries()(0, 0) == Approx(50.0));
  }
}

TEST_CASE("huge measurement variance barely moves the state") {
  const StateVector x = two_atoms(5.0);
  const UpdateOutcome o = apply_constraint(x, init_covariance(2, 100.0), Constraint::distance(0, 1, 10.0, 1e12), {});
  CHECK((o.state.coords() - x.coords()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("precise distance is nearly satisfied after one update") {
  const UpdateOutcome o =
      apply_constraint(two_atoms(5.0), init_covariance(2, 100.0), Constraint::distance(0, 1, 10.0, 1e-4), {});
  CHECK(std::abs(eval_distance(o.state, 0, 1).value - 10.0) < 0.1);
  CHECK(o.innovation == Approx(5.0));
}

TEST_CASE("covariance stays symmetric with non-increasing diagonal; untouched atoms keep their state") {
  std::mt19937_64 rng(11);
  StateVector x = init_state(6, {0.0, 20.0}, 8);
  CovarianceMatrix c = init_covariance(6, 100.0);
  std::uniform_int_distribution<std::size_t> atom(0, 5);
  for (int t = 0; t < 200; ++t) {
    std::size_t i = atom(rng), j = atom(rng);
    if (i == j) continue;
    const Eigen::VectorXd diag_before = c.entries().diagonal();
    const StateVector x_before = x;
    const CovarianceMatrix c_before = c;
    const UpdateStats s = apply_constraint_inplace(x, c, Constraint::distance(i, j, 6.0, 0.5), {});
    CHECK(c.asymmetry() <= 1e-12);
    CHECK((c.entries().diagonal() - diag_before).maxCoeff() <= 1e-12);
    if (t == 0) {
      // C starts diagonal, so atoms other than i and j have zero gain.
      for (std::size_t k = 0; k < 6; ++k) {
        if (k == i || k == j) continue;
        CHECK(x.atom(k) == x_before.atom(k));
        CHECK(atom_block(c, k, k) == atom_block(c_before, k, k));
      }
    }
    CHECK(s.inner_iterations >= 1);
    CHECK(s.inner_iterations <= 3);
  }
}

TEST_CASE("apply_constraint matches the dense brute-force update") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> natoms(4, 5);
  std::uniform_real_distribution<double> meas(2.0, 8.0);
  std::uniform_real_distribution<double> var(0.01, 2.0);
  const SolveConfig cfg;
  double worst_x = 0.0, worst_c = 0.0;
  for (int t = 0; t < 300; ++t) {
    const auto n = static_cast<std::size_t>(natoms(rng));
    const StateVector x = init_state(n, {0.0, 6.0}, 500 + t);
    const CovarianceMatrix c(oracle::random_spd(static_cast<Eigen::Index>(3 * n), rng));
    Constraint con;
    switch (t % 3) {
      case 0: con = Constraint::distance(0, n - 1, meas(rng), var(rng)); break;
      case 1: con = Constraint::angle(1, 0, 3, 1.2, var(rng) * 0.1); break;
      default: con = Constraint::dihedral(0, 1, 2, 3, -2.0, var(rng) * 0.1); break;
    }
    const UpdateOutcome got = apply_constraint(x, c, con, cfg);
    const oracle::DenseResult want = oracle::dense_update(x, c.entries(), con, cfg.inner_tol, cfg.inner_max_iters);
    worst_x = std::max(worst_x, (got.state.coords() - want.x).cwiseAbs().maxCoeff());
    worst_c = std::max(worst_c, (got.covariance.entries() - want.c).cwiseAbs().maxCoeff());
  }
  CHECK(worst_x <= 1e-10);
  CHECK(worst_c <= 1e-10);
}

TEST_CASE("singular geometry at entry skips the update") {
  StateVector x = StateVector::zeros(3);
  x.set_atom(2, Vec3(1, 0, 0));
  const CovarianceMatrix c = init_covariance(3, 100.0);
  const UpdateOutcome o = apply_constraint(x, c, Constraint::distance(0, 1, 3.0, 1.0), {});
  CHECK(o.skipped);
  CHECK(o.state == x);
  CHECK(o.covariance == c);
}

TEST_CASE("argument checks") {
  const StateVector x = two_atoms(3.0);
  CHECK_THROWS_AS(apply_constraint(x, init_covariance(3, 1.0), Constraint::distance(0, 1, 3, 1), {}),
                  std::invalid_argument);
  CHECK_THROWS_AS(apply_constraint(x, init_covariance(2, 1.0), Constraint::distance(0, 2, 3, 1), {}),
                  std::invalid_argument);
  Eigen::MatrixXd neg = -Eigen::MatrixXd::Identity(6, 6);
  CHECK_THROWS_AS(apply_constraint(x, CovarianceMatrix(neg), Constraint::distance(0, 1, 3, 1), {}),
                  NumericalBreakdown);
}
