#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "dikf/scheduler.hpp"

using namespace dikf;
using Catch::Approx;

namespace {

std::vector<Constraint> three_constraints() {
  return {Constraint::distance(0, 1, 1, 1, 0), Constraint::distance(0, 2, 1, 1, 1),
          Constraint::distance(1, 2, 1, 1, 2)};
}

Dataset small_dataset(std::uint64_t seed, double fraction = 1.0) {
  return make_dataset(8, fraction, NoiseSpec{NoiseModel::exact, kExactVariance, 0}, seed);
}

}  // namespace

TEST_CASE("sorted ordering puts the largest |E| first") {
  const auto cons = three_constraints();
  std::mt19937_64 rng(0);
  const std::vector<double> errs{0.5, 2.0, -1.0};
  CHECK(order_constraints(cons, errs, Ordering::sorted, rng) == std::vector<std::size_t>{1, 2, 0});

  const std::vector<double> ties{1.0, -1.0, std::numeric_limits<double>::infinity()};
  CHECK(order_constraints(cons, ties, Ordering::sorted, rng) == std::vector<std::size_t>{2, 0, 1});
  CHECK(order_constraints(cons, errs, Ordering::fixed, rng) == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS_AS(order_constraints(cons, std::vector<double>{1.0}, Ordering::fixed, rng), std::invalid_argument);
}

TEST_CASE("random ordering is a seeded permutation") {
  std::vector<Constraint> cons;
  for (std::size_t k = 0; k < 40; ++k) cons.push_back(Constraint::distance(k, k + 1, 1, 1, std::int64_t(k)));
  const std::vector<double> errs(cons.size(), 0.0);
  std::mt19937_64 a(9), b(9);
  const auto pa = order_constraints(cons, errs, Ordering::random, a);
  const auto pb = order_constraints(cons, errs, Ordering::random, b);
  CHECK(pa == pb);
  auto sorted = pa;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> ident(cons.size());
  std::iota(ident.begin(), ident.end(), std::size_t{0});
  CHECK(sorted == ident);
  CHECK(pa != ident);
  CHECK(order_constraints(cons, errs, Ordering::random, a) != pa);
}

TEST_CASE("stop test is an OR of the two thresholds") {
  const SolveConfig cfg;
  CHECK(check_stop(0.2, 5.0, cfg));
  CHECK(check_stop(0.5, 0.9, cfg));
  CHECK(check_stop(0.3, 1.5, cfg));
  CHECK_FALSE(check_stop(0.31, 1.01, cfg));
}

TEST_CASE("summarize_errors ignores non-finite entries") {
  const std::vector<double> e{-2.0, 1.0, std::numeric_limits<double>::infinity()};
  const auto [avg, mx] = summarize_errors(e);
  CHECK(avg == Approx(1.5));
  CHECK(mx == 2.0);
}

TEST_CASE("empty constraint lists") {
  const StateVector x = init_state(3, {0, 5}, 1);
  const CovarianceMatrix c = init_covariance(3, 100.0);
  const CycleResult r = run_cycle(x, c, std::span<const Constraint>{}, {});
  CHECK(r.state == x);
  CHECK(r.covariance == c);
  CHECK(r.errors.empty());

  Dataset d;
  d.n_atoms = 3;
  const Solution s = solve(d, {});
  CHECK(s.converged);
  CHECK(s.cycles_run == 1);
  CHECK(s.trace.at(0).avg_error == 0.0);
}

TEST_CASE("run_cycle errors are evaluated against the end-of-cycle state") {
  const Dataset d = small_dataset(4);
  const CycleResult r = run_cycle(init_state(8, {0, 50}, 2), init_covariance(8, 100.0), d.constraints, {});
  REQUIRE(r.errors.size() == d.constraints.size());
  for (std::size_t k = 0; k < r.errors.size(); ++k) {
    CHECK(r.errors[k] == standardized_error(d.constraints[k], r.state));
  }
}

TEST_CASE("each cycle restarts from the initial covariance") {
  const Dataset d = small_dataset(5);
  SolveConfig cfg;
  cfg.ordering = Ordering::fixed;
  cfg.max_outer_cycles = 2;
  cfg.stop_on_convergence = false;
  cfg.seed = 17;
  std::vector<StateVector> ends;
  std::vector<CovarianceMatrix> covs;
  SolveOptions opts;
  opts.observer = [&](std::size_t pos, const Constraint&, const StateVector& x, const CovarianceMatrix& c) {
    if (pos + 1 == d.constraints.size()) {
      ends.push_back(x);
      covs.push_back(c);
    }
  };
  solve(d, cfg, opts);
  REQUIRE(ends.size() == 2);
  const CycleResult again = run_cycle(ends[0], init_covariance(8, cfg.init_variance), d.constraints, cfg);
  CHECK(again.state == ends[1]);
  CHECK(again.covariance == covs[1]);
}

TEST_CASE("solve is deterministic and returns the best cycle") {
  const Dataset d = small_dataset(6, 0.5);
  SolveConfig cfg;
  cfg.max_outer_cycles = 12;
  cfg.stop_on_convergence = false;
  cfg.ordering = Ordering::random;
  cfg.seed = 3;
  SolveOptions opts;
  opts.target = d.target;
  const Solution a = solve(d, cfg, opts);
  const Solution b = solve(d, cfg, opts);
  CHECK(a.state == b.state);
  CHECK(a.covariance == b.covariance);
  REQUIRE(a.trace.size() == 12);
  double best = std::numeric_limits<double>::infinity();
  for (const CycleReport& r : a.trace) {
    best = std::min(best, r.avg_error);
    CHECK(r.rmsd_to_target.has_value());
  }
  CHECK(a.trace.at(std::size_t(a.best_cycle - 1)).avg_error == best);
  CHECK(error_stats(d.constraints, a.state).avg == Approx(best).epsilon(1e-12));
  REQUIRE(a.per_constraint_errors.size() == d.constraints.size());
  CHECK(a.per_constraint_errors[0].first == d.constraints[0].id);
}

TEST_CASE("max_outer_cycles bounds the run") {
  const Dataset d = small_dataset(7, 0.4);
  SolveConfig cfg;
  cfg.max_outer_cycles = 1;
  cfg.avg_stop = 1e-9;
  cfg.max_stop = 1e-9;
  const Solution s = solve(d, cfg);
  CHECK(s.cycles_run == 1);
  CHECK(s.trace.size() == 1);
  CHECK_FALSE(s.converged);
}

TEST_CASE("trajectory is invariant under rigid motions of the start") {
  const Dataset d = small_dataset(8);
  SolveConfig cfg;
  cfg.ordering = Ordering::fixed;
  // Far from convergence round-off grows quickly, so only the first two
  // cycles are compared.
  cfg.max_outer_cycles = 2;
  cfg.stop_on_convergence = false;
  const StateVector x0 = init_state(8, {0, 50}, 21);
  StateVector moved = x0;
  // Quarter turn about z plus a shift: coordinates are permuted with signs, so
  // the infinity-norm stopping rule sees the same steps.
  for (std::size_t i = 0; i < 8; ++i) {
    const Vec3 p = x0.atom(i);
    moved.set_atom(i, Vec3(-p.y() + 10.0, p.x() - 4.0, p.z() + 2.5));
  }
  SolveOptions oa, ob;
  oa.initial_state = x0;
  ob.initial_state = moved;
  const Solution a = solve(d, cfg, oa);
  const Solution b = solve(d, cfg, ob);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k) {
    CHECK(b.trace[k].avg_error == Approx(a.trace[k].avg_error).epsilon(1e-6));
  }
}

TEST_CASE("converged runs from rigidly moved starts agree on RMSD") {
  const Dataset d = small_dataset(10);
  SolveConfig cfg;
  const StateVector x0 = init_state(8, {0, 50}, 33);
  const Eigen::AngleAxisd rot(1.234, Vec3(1.0, -2.0, 0.5).normalized());
  StateVector moved = x0;
  for (std::size_t i = 0; i < 8; ++i) moved.set_atom(i, rot * x0.atom(i) + Vec3(-7.0, 3.0, 12.0));
  SolveOptions oa, ob;
  oa.initial_state = x0;
  ob.initial_state = moved;
  oa.target = ob.target = d.target;
  const Solution a = solve(d, cfg, oa);
  const Solution b = solve(d, cfg, ob);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  const double ra = superpose_rmsd(a.state, *d.target, true).rmsd;
  const double rb = superpose_rmsd(b.state, *d.target, true).rmsd;
  CHECK(std::abs(ra - rb) < 0.1);
}

TEST_CASE("solve validates its options") {
  const Dataset d = small_dataset(9, 0.5);
  SolveOptions opts;
  opts.initial_state = StateVector::zeros(3);
  CHECK_THROWS_AS(solve(d, {}, opts), std::invalid_argument);
  SolveConfig bad;
  bad.inner_max_iters = 0;
  CHECK_THROWS_AS(solve(d, bad), std::invalid_argument);
}
