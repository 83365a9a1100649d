#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "dikf/model.hpp"

using namespace dikf;

TEST_CASE("init_state draws inside the range and is deterministic") {
  const StateVector a = init_state(46, {0.0, 50.0}, 42);
  const StateVector b = init_state(46, {0.0, 50.0}, 42);
  const StateVector c = init_state(46, {0.0, 50.0}, 43);
  REQUIRE(a.dim() == 138);
  REQUIRE(a.n_atoms() == 46);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.coords().minCoeff() >= 0.0);
  CHECK(a.coords().maxCoeff() <= 50.0);
}

TEST_CASE("init_state with a collapsed range is constant") {
  const StateVector x = init_state(1, {7.0, 7.0}, 0);
  CHECK(x.coords() == Eigen::Vector3d(7.0, 7.0, 7.0));
}

TEST_CASE("init_state rejects bad arguments") {
  CHECK_THROWS_AS(init_state(0, {0.0, 1.0}, 0), std::invalid_argument);
  CHECK_THROWS_AS(init_state(3, {2.0, 1.0}, 0), std::invalid_argument);
}

TEST_CASE("init_covariance is diagonal") {
  const CovarianceMatrix c = init_covariance(2, 100.0);
  REQUIRE(c.dim() == 6);
  CHECK(c.entries() == Eigen::MatrixXd::Identity(6, 6) * 100.0);
  CHECK_THROWS_AS(init_covariance(2, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(init_covariance(0, 1.0), std::invalid_argument);
}

TEST_CASE("atom_block reads the 3x3 sub-block and mirrors under symmetry") {
  Eigen::MatrixXd m(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) m(i, j) = i + j + 0.25 * (i * j);
  CovarianceMatrix c(m);
  CHECK(atom_block(c, 0, 1) == m.block<3, 3>(0, 3));
  CHECK(atom_block(c, 1, 0) == atom_block(c, 0, 1).transpose());
  CHECK_THROWS_AS(atom_block(c, 2, 0), std::invalid_argument);
}

TEST_CASE("StateVector validates length and finiteness") {
  CHECK_THROWS_AS(StateVector(Eigen::VectorXd::Zero(4)), std::invalid_argument);
  Eigen::VectorXd bad = Eigen::VectorXd::Zero(3);
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(StateVector(bad), std::invalid_argument);

  StateVector x = StateVector::zeros(2);
  x.set_atom(1, Vec3(1, 2, 3));
  CHECK(x.atom(1) == Vec3(1, 2, 3));
  CHECK(x.coords()[5] == 3.0);
}

TEST_CASE("CovarianceMatrix symmetrize averages off-diagonal pairs") {
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(3, 3);
  m(0, 1) = 1.0;
  m(1, 0) = 3.0;
  CovarianceMatrix c(m);
  CHECK(c.asymmetry() == 2.0);
  c.symmetrize();
  CHECK(c.entries()(0, 1) == 2.0);
  CHECK(c.entries()(1, 0) == 2.0);
  CHECK(c.asymmetry() == 0.0);
  CHECK(c.min_diagonal() == 1.0);
}

TEST_CASE("Constraint construction checks arity, distinctness and floors the variance") {
  const Constraint d = Constraint::distance(0, 1, 3.8, 0.0, 5);
  CHECK(d.variance == kVarianceFloor);
  CHECK(d.id == 5);
  CHECK(d.indices().size() == 2);
  CHECK_THROWS_AS(Constraint::distance(2, 2, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(Constraint::angle(0, 1, 0, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(Constraint::distance(0, 1, 1.0, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(Constraint::distance(0, 1, std::nan(""), 1.0), std::invalid_argument);
  const std::array<std::size_t, 3> three{0, 1, 2};
  CHECK_THROWS_AS(Constraint::make(ConstraintKind::distance, three, 1.0, 1.0, 0), std::invalid_argument);

  const Constraint t = Constraint::dihedral(0, 1, 2, 3, 0.5, 0.1);
  CHECK_NOTHROW(t.validate(4));
  CHECK_THROWS_AS(t.validate(3), std::invalid_argument);
}

TEST_CASE("enum string round trips") {
  for (ConstraintKind k : {ConstraintKind::distance, ConstraintKind::angle, ConstraintKind::dihedral}) {
    CHECK(parse_constraint_kind(to_string(k)) == k);
  }
  for (Ordering o : {Ordering::sorted, Ordering::random, Ordering::fixed}) CHECK(parse_ordering(to_string(o)) == o);
  CHECK_THROWS_AS(parse_ordering("shuffled"), std::invalid_argument);
  CHECK_THROWS_AS(parse_constraint_kind("torsion"), std::invalid_argument);
}

TEST_CASE("SolveConfig defaults and validation") {
  SolveConfig c;
  CHECK(c.ordering == Ordering::sorted);
  CHECK(c.max_outer_cycles == 100);
  CHECK(c.avg_stop == 0.3);
  CHECK(c.max_stop == 1.0);
  CHECK(c.inner_tol == 0.01);
  CHECK(c.inner_max_iters == 3);
  CHECK(c.init_variance == 100.0);
  CHECK_NOTHROW(c.validate());
  c.max_outer_cycles = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(1, 1) != derive_seed(1, 2));
  CHECK(derive_seed(1, 1) != derive_seed(2, 1));
  CHECK(derive_seed(9, 3) == derive_seed(9, 3));
}
